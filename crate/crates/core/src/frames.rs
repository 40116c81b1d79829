//! Body-frame and attitude conversions between the dynamics side and the ADS side.
//!
//! The dynamics side uses a Front-Left-Up (FLU) body frame and reports attitude
//! as Euler angles. The ADS side uses a Right-Front-Up (RFU) body frame and
//! expects a unit quaternion. Euler angles follow the intrinsic Z-Y-X
//! (yaw, pitch, roll) convention and are normalized to (-pi, pi] after every
//! transform. Quaternions are stored as (w, x, y, z) with w >= 0.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

/// Three-component vector. Units depend on usage (m, m/s, m/s^2, rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Roll, pitch and yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }

    /// Every component wrapped into (-pi, pi].
    pub fn normalized(self) -> Self {
        Self::new(
            normalize_angle(self.roll),
            normalize_angle(self.pitch),
            normalize_angle(self.yaw),
        )
    }
}

/// Unit quaternion, (w, x, y, z) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Unit-normalized with the sign chosen so that `w >= 0`.
    pub fn canonical(self) -> Self {
        let n = self.norm();
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Row-major rotation matrix mapping body coordinates to world coordinates.
    pub fn to_rotation_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

/// Which body-frame convention a pose is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameTag {
    /// Front-Left-Up, used by the vehicle-dynamics side.
    DynamicsFLU,
    /// Right-Front-Up, used by the driving stack.
    AdsRFU,
}

/// Position and attitude tagged with the body-frame convention it uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quaternion,
    pub frame: FrameTag,
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can land exactly on 2*pi - eps rounding to -pi
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// FLU body vector to RFU body vector.
pub fn flu_to_rfu(v: Vec3) -> Vec3 {
    Vec3::new(-v.y, v.x, v.z)
}

/// RFU body vector to FLU body vector; exact inverse of [`flu_to_rfu`].
pub fn rfu_to_flu(v: Vec3) -> Vec3 {
    Vec3::new(v.y, -v.x, v.z)
}

/// Maps dynamics-side Euler angles onto the ADS-side convention: a fixed axis
/// permutation with sign flips followed by a -pi/2 yaw offset.
pub fn euler_cm_to_apollo(e: EulerAngles) -> EulerAngles {
    EulerAngles::new(e.yaw, -e.roll, -e.pitch - FRAC_PI_2).normalized()
}

/// Inverse of [`euler_cm_to_apollo`], up to angle normalization.
pub fn euler_apollo_to_cm(e: EulerAngles) -> EulerAngles {
    let shifted_yaw = e.yaw + FRAC_PI_2;
    EulerAngles::new(-e.pitch, -shifted_yaw, e.roll).normalized()
}

/// Quaternion for the intrinsic yaw-pitch-roll rotation, canonical sign.
pub fn euler_to_quaternion(e: EulerAngles) -> Quaternion {
    let (sr, cr) = (e.roll * 0.5).sin_cos();
    let (sp, cp) = (e.pitch * 0.5).sin_cos();
    let (sy, cy) = (e.yaw * 0.5).sin_cos();
    Quaternion::new(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )
    .canonical()
}

/// Pitch distance from +-pi/2 below which the decomposition is flagged.
pub const GIMBAL_LOCK_TOLERANCE: f64 = 1e-6;

/// Result of decomposing a quaternion into Euler angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub angles: EulerAngles,
    /// Set when pitch is within [`GIMBAL_LOCK_TOLERANCE`] of +-pi/2. Yaw is
    /// then fixed to zero and the whole heading is carried by roll.
    pub gimbal_lock: bool,
}

pub fn quaternion_to_euler(q: Quaternion) -> EulerDecomposition {
    let q = q.canonical();
    let sin_pitch = (2.0 * (q.w * q.y - q.z * q.x)).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin();
    if FRAC_PI_2 - pitch.abs() <= GIMBAL_LOCK_TOLERANCE {
        let pitch = FRAC_PI_2.copysign(pitch);
        let roll = 2.0 * q.x.atan2(q.w);
        return EulerDecomposition {
            angles: EulerAngles::new(roll, pitch, 0.0).normalized(),
            gimbal_lock: true,
        };
    }
    let roll = (2.0 * (q.w * q.x + q.y * q.z)).atan2(1.0 - 2.0 * (q.x * q.x + q.y * q.y));
    let yaw = (2.0 * (q.w * q.z + q.x * q.y)).atan2(1.0 - 2.0 * (q.y * q.y + q.z * q.z));
    EulerDecomposition {
        angles: EulerAngles::new(roll, pitch, yaw).normalized(),
        gimbal_lock: false,
    }
}
