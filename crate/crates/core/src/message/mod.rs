//! Bridged message payloads and the two wire dialects.
//!
//! Dialect A is the dynamics-side encoding: newline-terminated flat JSON with
//! snake_case keys, vectors as 3-element arrays, throttle and brake as
//! fractions, steering in radians. Dialect B is the ADS-side encoding: a 4-byte
//! big-endian length prefix followed by nested camelCase JSON with steering,
//! throttle and brake in percent. Keys are emitted in sorted order so encoding
//! is byte-deterministic. Unknown keys are ignored on decode.

mod dialect_a;
mod dialect_b;
mod fields;

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{EulerAngles, Quaternion, Vec3};

pub use dialect_a::{decode_a, encode_a};
pub use dialect_b::{decode_b, encode_b, B_LENGTH_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("malformed record at byte {offset}: {reason}")]
    MalformedRecord { offset: usize, reason: String },
}

impl CodecError {
    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        CodecError::MalformedRecord { offset, reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dialect {
    A,
    B,
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::A => "A",
            Dialect::B => "B",
        })
    }
}

/// Selector position. `D` is the only forward driving position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gear {
    P,
    R,
    N,
    D,
}

/// Lamp bitfield: bit 0 left turn, bit 1 right turn, bit 2 hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Lamps {
    pub left_turn: bool,
    pub right_turn: bool,
    pub hazard: bool,
}

impl Lamps {
    pub fn bits(&self) -> u8 {
        (self.left_turn as u8) | ((self.right_turn as u8) << 1) | ((self.hazard as u8) << 2)
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        if bits > 0b111 {
            return None;
        }
        Some(Self {
            left_turn: bits & 1 != 0,
            right_turn: bits & 2 != 0,
            hazard: bits & 4 != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TurnSignal {
    #[default]
    Off,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectType {
    Car,
    Truck,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorStatus {
    Ok,
    Degraded,
    Off,
}

/// Which side of the lock-step loop produced a tick-barrier record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyncOrigin {
    Dynamics,
    Ads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartupMsg {
    pub start_position: Vec3,
    pub end_position: Vec3,
    /// m/s
    pub desired_speed: f64,
    pub startup_flag: bool,
}

/// Localization as produced by the dynamics side: FLU body-frame vectors and
/// Euler attitude in the dynamics convention.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationA {
    pub position: Vec3,
    pub attitude: EulerAngles,
    pub linear_velocity: Vec3,
    pub linear_acceleration: Vec3,
    pub angular_velocity: Vec3,
    /// rad, East = 0, counterclockwise positive
    pub heading: f64,
}

/// Localization as consumed by the ADS side: RFU body-frame vectors and a
/// quaternion attitude.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationB {
    pub position: Vec3,
    pub orientation: Quaternion,
    pub linear_velocity: Vec3,
    pub linear_acceleration: Vec3,
    pub angular_velocity: Vec3,
    pub heading: f64,
}

/// Control command in dynamics-side units.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlA {
    /// rad/s at the road wheel, magnitude limit
    pub steering_rate: f64,
    /// road-wheel angle, rad
    pub steering_angle: f64,
    /// fraction in [0, 1]
    pub throttle: f64,
    /// fraction in [0, 1]
    pub brake: f64,
    pub gear: Gear,
    pub lamps: Lamps,
}

/// Control command in ADS-side units.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlB {
    /// percent of full lock per second, magnitude limit
    pub steering_rate_percent: f64,
    /// percent of full lock in [-100, 100]
    pub steering_target_percent: f64,
    /// [0, 100]
    pub throttle_percent: f64,
    /// [0, 100]
    pub brake_percent: f64,
    pub gear: Gear,
    pub lamps: Lamps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChassisA {
    pub speed: f64,
    pub throttle: f64,
    pub brake: f64,
    /// road-wheel angle, rad
    pub steering: f64,
    /// rad/s
    pub steering_rate: f64,
    pub gear: Gear,
    pub turn_signal: TurnSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChassisB {
    pub speed: f64,
    pub throttle_percent: f64,
    pub brake_percent: f64,
    pub steering_percent: f64,
    pub steering_rate_percent: f64,
    pub gear: Gear,
    pub turn_signal: TurnSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorObject {
    pub id: u32,
    /// map frame, m
    pub position: Vec3,
    /// map frame, m/s
    pub velocity: Vec3,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub object_type: ObjectType,
}

/// Ground-truth object list. Map-frame quantities, identical in both dialects
/// apart from wire encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorObjectList {
    pub objects: Vec<SensorObject>,
    pub stamp_s: f64,
    pub sensor_status: SensorStatus,
}

/// Tick-barrier record for the lock-step socket mode. Always Dialect A.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncMsg {
    pub tick: u64,
    pub origin: SyncOrigin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Startup(StartupMsg),
    LocalizationA(LocalizationA),
    LocalizationB(LocalizationB),
    ControlA(ControlA),
    ControlB(ControlB),
    ChassisA(ChassisA),
    ChassisB(ChassisB),
    Objects(SensorObjectList),
    Sync(SyncMsg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Startup,
    Localization,
    Control,
    Chassis,
    Objects,
    Sync,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::Startup => "startup",
            MessageKind::Localization => "localization",
            MessageKind::Control => "control",
            MessageKind::Chassis => "chassis",
            MessageKind::Objects => "objects",
            MessageKind::Sync => "sync",
        }
    }
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Startup(_) => MessageKind::Startup,
            Payload::LocalizationA(_) | Payload::LocalizationB(_) => MessageKind::Localization,
            Payload::ControlA(_) | Payload::ControlB(_) => MessageKind::Control,
            Payload::ChassisA(_) | Payload::ChassisB(_) => MessageKind::Chassis,
            Payload::Objects(_) => MessageKind::Objects,
            Payload::Sync(_) => MessageKind::Sync,
        }
    }

    /// The dialect whose units this payload carries; `None` when the payload
    /// is unit-identical on both sides.
    pub fn dialect(&self) -> Option<Dialect> {
        match self {
            Payload::LocalizationA(_) | Payload::ControlA(_) | Payload::ChassisA(_) => {
                Some(Dialect::A)
            }
            Payload::LocalizationB(_) | Payload::ControlB(_) | Payload::ChassisB(_) => {
                Some(Dialect::B)
            }
            Payload::Startup(_) | Payload::Objects(_) | Payload::Sync(_) => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Payload::Startup(m) => validate_startup(m),
            Payload::LocalizationA(m) => {
                check_vecs(&[
                    ("position", m.position),
                    ("linear_velocity", m.linear_velocity),
                    ("linear_acceleration", m.linear_acceleration),
                    ("angular_velocity", m.angular_velocity),
                ])?;
                if !m.attitude.is_finite() {
                    return Err("attitude not finite".into());
                }
                check_heading(m.heading)
            }
            Payload::LocalizationB(m) => {
                check_vecs(&[
                    ("position", m.position),
                    ("linear_velocity", m.linear_velocity),
                    ("linear_acceleration", m.linear_acceleration),
                    ("angular_velocity", m.angular_velocity),
                ])?;
                if !m.orientation.is_finite() || !m.orientation.is_unit(1e-9) {
                    return Err("orientation is not a unit quaternion".into());
                }
                check_heading(m.heading)
            }
            Payload::ControlA(m) => {
                check_finite("steering_rate", m.steering_rate)?;
                check_finite("steering_angle", m.steering_angle)?;
                check_range("steering_rate", m.steering_rate, 0.0, f64::MAX)?;
                check_range("throttle", m.throttle, 0.0, 1.0)?;
                check_range("brake", m.brake, 0.0, 1.0)?;
                check_exclusive(m.throttle, m.brake)
            }
            Payload::ControlB(m) => {
                check_finite("steering_rate_percent", m.steering_rate_percent)?;
                check_range("steering_rate_percent", m.steering_rate_percent, 0.0, f64::MAX)?;
                check_range("steering_target_percent", m.steering_target_percent, -100.0, 100.0)?;
                check_range("throttle_percent", m.throttle_percent, 0.0, 100.0)?;
                check_range("brake_percent", m.brake_percent, 0.0, 100.0)?;
                check_exclusive(m.throttle_percent, m.brake_percent)
            }
            Payload::ChassisA(m) => {
                check_speed(m.speed, m.gear)?;
                check_range("throttle", m.throttle, 0.0, 1.0)?;
                check_range("brake", m.brake, 0.0, 1.0)?;
                check_finite("steering", m.steering)?;
                check_finite("steering_rate", m.steering_rate)
            }
            Payload::ChassisB(m) => {
                check_speed(m.speed, m.gear)?;
                check_range("throttle_percent", m.throttle_percent, 0.0, 100.0)?;
                check_range("brake_percent", m.brake_percent, 0.0, 100.0)?;
                check_range("steering_percent", m.steering_percent, -100.0, 100.0)?;
                check_finite("steering_rate_percent", m.steering_rate_percent)
            }
            Payload::Objects(m) => validate_objects(m),
            Payload::Sync(_) => Ok(()),
        }
    }
}

/// Everything that crosses a bus or the bridge.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    /// Per-channel sequence number, assigned by the bus on publish.
    pub seq: u64,
    /// Simulation time, s.
    pub stamp_s: f64,
    pub channel: String,
    pub payload: Payload,
}

impl MessageEnvelope {
    /// Envelope with `seq` 0; the bus assigns the real value.
    pub fn new(channel: impl Into<String>, stamp_s: f64, payload: Payload) -> Self {
        Self { seq: 0, stamp_s, channel: channel.into(), payload }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.channel.is_empty() {
            return Err("empty channel".into());
        }
        if !(self.stamp_s.is_finite() && self.stamp_s >= 0.0) {
            return Err(format!("stamp_s {} must be finite and >= 0", self.stamp_s));
        }
        self.payload.validate()
    }
}

fn check_finite(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} is not finite"))
    }
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<(), String> {
    check_finite(name, v)?;
    if v < lo || v > hi {
        return Err(format!("{name} = {v} outside [{lo}, {hi}]"));
    }
    Ok(())
}

fn check_exclusive(throttle: f64, brake: f64) -> Result<(), String> {
    if throttle != 0.0 && brake != 0.0 {
        return Err(format!("throttle ({throttle}) and brake ({brake}) both nonzero"));
    }
    Ok(())
}

fn check_heading(h: f64) -> Result<(), String> {
    check_finite("heading", h)?;
    if h <= -PI || h > PI {
        return Err(format!("heading {h} outside (-pi, pi]"));
    }
    Ok(())
}

fn check_speed(speed: f64, gear: Gear) -> Result<(), String> {
    check_finite("speed", speed)?;
    if gear != Gear::R && speed < 0.0 {
        return Err(format!("negative speed {speed} in gear {gear:?}"));
    }
    Ok(())
}

fn check_vecs(vs: &[(&str, Vec3)]) -> Result<(), String> {
    for (name, v) in vs {
        if !v.is_finite() {
            return Err(format!("{name} is not finite"));
        }
    }
    Ok(())
}

fn validate_startup(m: &StartupMsg) -> Result<(), String> {
    check_vecs(&[("start_position", m.start_position), ("end_position", m.end_position)])?;
    check_range("desired_speed", m.desired_speed, 0.0, f64::MAX)?;
    if m.start_position == m.end_position {
        return Err("start and end positions coincide".into());
    }
    Ok(())
}

fn validate_objects(m: &SensorObjectList) -> Result<(), String> {
    check_finite("stamp_s", m.stamp_s)?;
    let mut ids: Vec<u32> = m.objects.iter().map(|o| o.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err("duplicate object id".into());
    }
    for o in &m.objects {
        check_vecs(&[("object position", o.position), ("object velocity", o.velocity)])?;
        check_finite("object heading", o.heading)?;
        for (name, d) in [("length", o.length), ("width", o.width), ("height", o.height)] {
            if !(d.is_finite() && d > 0.0) {
                return Err(format!("object {} {name} must be > 0", o.id));
            }
        }
    }
    Ok(())
}

pub(crate) fn gear_str(g: Gear) -> &'static str {
    match g {
        Gear::P => "P",
        Gear::R => "R",
        Gear::N => "N",
        Gear::D => "D",
    }
}

pub(crate) fn parse_gear(s: &str) -> Option<Gear> {
    Some(match s {
        "P" => Gear::P,
        "R" => Gear::R,
        "N" => Gear::N,
        "D" => Gear::D,
        _ => return None,
    })
}
