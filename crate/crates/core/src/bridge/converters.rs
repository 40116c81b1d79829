//! Converter plugins and the static registry.

use super::{BridgeError, Direction};
use crate::frames::{euler_cm_to_apollo, euler_to_quaternion, flu_to_rfu};
use crate::message::{
    ChassisA, ChassisB, ControlA, ControlB, LocalizationA, LocalizationB, Payload, StartupMsg,
    SensorObjectList,
};

/// Conversion constants shared by all plugins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionParams {
    /// Road-wheel angle at 100 % steering, rad.
    pub max_steer_angle: f64,
}

impl Default for ConversionParams {
    fn default() -> Self {
        Self { max_steer_angle: 0.52 }
    }
}

/// One message transformation. Implementations hold no state, so a single
/// instance may serve concurrent calls.
pub trait MessageConverter: Send + Sync {
    fn name(&self) -> &'static str;
    fn supports(&self, direction: Direction) -> bool;
    fn default_direction(&self) -> Direction;
    fn convert(&self, direction: Direction, payload: &Payload, params: &ConversionParams) -> Result<Payload, BridgeError>;
}

pub struct StartupConverter;
pub struct LocalizationConverter;
pub struct ChassisConverter;
pub struct SensorConverter;
pub struct ControlConverter;

static REGISTRY: [&dyn MessageConverter; 5] =
    [&StartupConverter, &LocalizationConverter, &ChassisConverter, &SensorConverter, &ControlConverter];

pub fn registry() -> &'static [&'static dyn MessageConverter] {
    &REGISTRY
}

pub fn resolve_plugin(name: &str) -> Option<&'static dyn MessageConverter> {
    REGISTRY.iter().copied().find(|c| c.name() == name)
}

fn wrong_payload(plugin: &str, direction: Direction, payload: &Payload) -> BridgeError {
    BridgeError::InvalidPayload(format!(
        "{plugin} ({direction}) cannot convert a {} payload",
        payload.kind().as_str()
    ))
}

fn checked(payload: Payload) -> Result<Payload, BridgeError> {
    payload.validate().map_err(BridgeError::OutOfRange)?;
    Ok(payload)
}

impl MessageConverter for StartupConverter {
    fn name(&self) -> &'static str {
        "startup_converter"
    }
    fn supports(&self, _: Direction) -> bool {
        true
    }
    fn default_direction(&self) -> Direction {
        Direction::AToB
    }
    fn convert(&self, d: Direction, p: &Payload, _: &ConversionParams) -> Result<Payload, BridgeError> {
        match p {
            Payload::Startup(m) => Ok(Payload::Startup(convert_startup(m))),
            _ => Err(wrong_payload(self.name(), d, p)),
        }
    }
}

impl MessageConverter for LocalizationConverter {
    fn name(&self) -> &'static str {
        "localization_converter"
    }
    fn supports(&self, d: Direction) -> bool {
        d == Direction::AToB
    }
    fn default_direction(&self) -> Direction {
        Direction::AToB
    }
    fn convert(&self, d: Direction, p: &Payload, _: &ConversionParams) -> Result<Payload, BridgeError> {
        match (d, p) {
            (Direction::AToB, Payload::LocalizationA(m)) => checked(Payload::LocalizationB(convert_localization(m))),
            _ => Err(wrong_payload(self.name(), d, p)),
        }
    }
}

impl MessageConverter for ChassisConverter {
    fn name(&self) -> &'static str {
        "chassis_converter"
    }
    fn supports(&self, _: Direction) -> bool {
        true
    }
    fn default_direction(&self) -> Direction {
        Direction::AToB
    }
    fn convert(&self, d: Direction, p: &Payload, params: &ConversionParams) -> Result<Payload, BridgeError> {
        match (d, p) {
            (Direction::AToB, Payload::ChassisA(m)) => checked(Payload::ChassisB(chassis_a_to_b(m, params))),
            (Direction::BToA, Payload::ChassisB(m)) => checked(Payload::ChassisA(chassis_b_to_a(m, params))),
            _ => Err(wrong_payload(self.name(), d, p)),
        }
    }
}

impl MessageConverter for SensorConverter {
    fn name(&self) -> &'static str {
        "sensor_converter"
    }
    fn supports(&self, _: Direction) -> bool {
        true
    }
    fn default_direction(&self) -> Direction {
        Direction::AToB
    }
    fn convert(&self, d: Direction, p: &Payload, _: &ConversionParams) -> Result<Payload, BridgeError> {
        match p {
            Payload::Objects(m) => Ok(Payload::Objects(convert_sensor(m))),
            _ => Err(wrong_payload(self.name(), d, p)),
        }
    }
}

impl MessageConverter for ControlConverter {
    fn name(&self) -> &'static str {
        "control_converter"
    }
    fn supports(&self, _: Direction) -> bool {
        true
    }
    fn default_direction(&self) -> Direction {
        Direction::BToA
    }
    fn convert(&self, d: Direction, p: &Payload, params: &ConversionParams) -> Result<Payload, BridgeError> {
        match (d, p) {
            (Direction::BToA, Payload::ControlB(m)) => checked(Payload::ControlA(control_b_to_a(m, params))),
            (Direction::AToB, Payload::ControlA(m)) => checked(Payload::ControlB(control_a_to_b(m, params))),
            _ => Err(wrong_payload(self.name(), d, p)),
        }
    }
}

pub fn convert_startup(m: &StartupMsg) -> StartupMsg {
    m.clone()
}

/// Body vectors go FLU to RFU, attitude gets the ADS Euler convention and is
/// packed as a quaternion. Heading stays East-referenced.
pub fn convert_localization(m: &LocalizationA) -> LocalizationB {
    LocalizationB {
        position: m.position,
        orientation: euler_to_quaternion(euler_cm_to_apollo(m.attitude)),
        linear_velocity: flu_to_rfu(m.linear_velocity),
        linear_acceleration: flu_to_rfu(m.linear_acceleration),
        angular_velocity: flu_to_rfu(m.angular_velocity),
        heading: m.heading,
    }
}

pub fn convert_sensor(m: &SensorObjectList) -> SensorObjectList {
    m.clone()
}

fn rad_to_percent(rad: f64, p: &ConversionParams) -> f64 {
    rad / p.max_steer_angle * 100.0
}

fn percent_to_rad(pct: f64, p: &ConversionParams) -> f64 {
    pct / 100.0 * p.max_steer_angle
}

pub fn control_b_to_a(m: &ControlB, p: &ConversionParams) -> ControlA {
    ControlA {
        steering_rate: percent_to_rad(m.steering_rate_percent, p),
        steering_angle: percent_to_rad(m.steering_target_percent, p),
        throttle: m.throttle_percent / 100.0,
        brake: m.brake_percent / 100.0,
        gear: m.gear,
        lamps: m.lamps,
    }
}

pub fn control_a_to_b(m: &ControlA, p: &ConversionParams) -> ControlB {
    ControlB {
        steering_rate_percent: rad_to_percent(m.steering_rate, p),
        steering_target_percent: rad_to_percent(m.steering_angle, p),
        throttle_percent: m.throttle * 100.0,
        brake_percent: m.brake * 100.0,
        gear: m.gear,
        lamps: m.lamps,
    }
}

pub fn chassis_a_to_b(m: &ChassisA, p: &ConversionParams) -> ChassisB {
    ChassisB {
        speed: m.speed,
        throttle_percent: m.throttle * 100.0,
        brake_percent: m.brake * 100.0,
        steering_percent: rad_to_percent(m.steering, p),
        steering_rate_percent: rad_to_percent(m.steering_rate, p),
        gear: m.gear,
        turn_signal: m.turn_signal,
    }
}

pub fn chassis_b_to_a(m: &ChassisB, p: &ConversionParams) -> ChassisA {
    ChassisA {
        speed: m.speed,
        throttle: m.throttle_percent / 100.0,
        brake: m.brake_percent / 100.0,
        steering: percent_to_rad(m.steering_percent, p),
        steering_rate: percent_to_rad(m.steering_rate_percent, p),
        gear: m.gear,
        turn_signal: m.turn_signal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{quaternion_to_euler, EulerAngles, Quaternion, Vec3};
    use crate::message::{Gear, Lamps, TurnSignal};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn loc(yaw: f64, v: Vec3) -> LocalizationA {
        LocalizationA {
            position: Vec3::new(1.0, 2.0, 0.0),
            attitude: EulerAngles::new(0.0, 0.0, yaw),
            linear_velocity: v,
            linear_acceleration: Vec3::ZERO,
            angular_velocity: Vec3::ZERO,
            heading: yaw,
        }
    }

    // Independent oracle: rotate by the remap matrix, then build the
    // quaternion from half-angle products.
    fn oracle_quaternion(roll: f64, pitch: f64, yaw: f64) -> Quaternion {
        let (r, p, y) = (yaw, -roll, -pitch - FRAC_PI_2);
        let (sr, cr) = (r / 2.0).sin_cos();
        let (sp, cp) = (p / 2.0).sin_cos();
        let (sy, cy) = (y / 2.0).sin_cos();
        let q = Quaternion {
            w: cr * cp * cy + sr * sp * sy,
            x: sr * cp * cy - cr * sp * sy,
            y: cr * sp * cy + sr * cp * sy,
            z: cr * cp * sy - sr * sp * cy,
        };
        if q.w < 0.0 {
            Quaternion { w: -q.w, x: -q.x, y: -q.y, z: -q.z }
        } else {
            q
        }
    }

    #[test]
    fn level_pose_east() {
        let out = convert_localization(&loc(0.0, Vec3::new(20.0, 0.0, 0.0)));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(out.orientation.w, h, epsilon = 1e-7);
        assert_abs_diff_eq!(out.orientation.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.orientation.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.orientation.z, -h, epsilon = 1e-7);
        assert_eq!(out.linear_velocity, Vec3::new(0.0, 20.0, 0.0));
        assert_eq!(out.heading, 0.0);
        let q = oracle_quaternion(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(out.orientation.z, q.z, epsilon = 1e-15);
    }

    #[test]
    fn zero_motion_gets_offset_quaternion() {
        let out = convert_localization(&loc(0.0, Vec3::ZERO));
        assert_eq!(out.linear_velocity, Vec3::ZERO);
        assert_eq!(out.angular_velocity, Vec3::ZERO);
        let yaw = quaternion_to_euler(out.orientation).angles.yaw;
        assert_abs_diff_eq!(yaw, -FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn heading_north() {
        let out = convert_localization(&loc(FRAC_PI_2, Vec3::new(10.0, 0.0, 0.0)));
        assert_eq!(out.linear_velocity, Vec3::new(0.0, 10.0, 0.0));
        assert_eq!(out.heading, FRAC_PI_2);
    }

    #[test]
    fn heading_coherence_for_level_east_pose() {
        let out = convert_localization(&loc(0.0, Vec3::ZERO));
        let yaw = quaternion_to_euler(out.orientation).angles.yaw;
        assert_abs_diff_eq!(yaw + FRAC_PI_2, out.heading, epsilon = 1e-9);
    }

    #[test]
    fn quaternion_yaw_follows_remap_for_level_poses() {
        // A level pose with dynamics yaw ψ lands on ADS roll ψ, pitch 0,
        // yaw -π/2.
        for k in -6..=6 {
            let psi = k as f64 * PI / 7.0;
            let q = convert_localization(&loc(psi, Vec3::ZERO)).orientation;
            let e = quaternion_to_euler(q).angles;
            assert_abs_diff_eq!(e.roll, psi, epsilon = 1e-12);
            assert_abs_diff_eq!(e.yaw, -FRAC_PI_2, epsilon = 1e-12);
            let o = oracle_quaternion(0.0, 0.0, psi);
            assert_abs_diff_eq!(q.w, o.w, epsilon = 1e-12);
            assert_abs_diff_eq!(q.x, o.x, epsilon = 1e-12);
            assert_abs_diff_eq!(q.y, o.y, epsilon = 1e-12);
            assert_abs_diff_eq!(q.z, o.z, epsilon = 1e-12);
        }
    }

    #[test]
    fn control_units() {
        let p = ConversionParams::default();
        let b = ControlB {
            steering_rate_percent: 10.0,
            steering_target_percent: -100.0,
            throttle_percent: 37.0,
            brake_percent: 0.0,
            gear: Gear::D,
            lamps: Lamps::default(),
        };
        let a = control_b_to_a(&b, &p);
        assert_abs_diff_eq!(a.throttle, 0.37, epsilon = 1e-15);
        assert_abs_diff_eq!(a.steering_angle, -0.52, epsilon = 1e-15);
        let half = control_b_to_a(&ControlB { steering_target_percent: 50.0, ..b.clone() }, &p);
        assert_abs_diff_eq!(half.steering_angle, 0.26, epsilon = 1e-15);
    }

    #[test]
    fn chassis_units() {
        let a = ChassisA {
            speed: 25.0,
            throttle: 0.5,
            brake: 0.0,
            steering: 0.0,
            steering_rate: 0.0,
            gear: Gear::D,
            turn_signal: TurnSignal::Off,
        };
        let b = chassis_a_to_b(&a, &ConversionParams::default());
        assert_eq!(b.speed, 25.0);
        assert_eq!(b.throttle_percent, 50.0);
    }

    #[test]
    fn out_of_range_control_is_rejected() {
        let a = ControlA {
            steering_rate: 0.0,
            steering_angle: 0.6,
            throttle: 0.0,
            brake: 0.0,
            gear: Gear::D,
            lamps: Lamps::default(),
        };
        let err = ControlConverter
            .convert(Direction::AToB, &Payload::ControlA(a), &ConversionParams::default())
            .unwrap_err();
        assert!(matches!(err, BridgeError::OutOfRange(_)));
    }

    #[test]
    fn wrong_payload_kind() {
        let err = LocalizationConverter
            .convert(Direction::AToB, &Payload::Sync(crate::message::SyncMsg { tick: 0, origin: crate::message::SyncOrigin::Ads }), &ConversionParams::default())
            .unwrap_err();
        assert!(matches!(err, BridgeError::InvalidPayload(_)));
    }

    #[test]
    fn registry_names() {
        let names: Vec<&str> = registry().iter().map(|c| c.name()).collect();
        assert_eq!(names.len(), 5);
        for n in names {
            assert!(resolve_plugin(n).is_some());
        }
        assert!(resolve_plugin("foo").is_none());
    }
}
