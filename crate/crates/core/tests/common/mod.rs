#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

use proptest::prelude::*;

use adcosim_core::frames::{euler_to_quaternion, EulerAngles, Vec3};
use adcosim_core::map::{BaseMap, LaneType, Point};
use adcosim_core::message::*;

pub fn vec3() -> impl Strategy<Value = Vec3> {
    (-1e4..1e4f64, -1e4..1e4f64, -1e3..1e3f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn angle() -> impl Strategy<Value = f64> {
    -PI + 1e-9..PI
}

pub fn euler() -> impl Strategy<Value = EulerAngles> {
    (angle(), angle(), angle()).prop_map(|(r, p, y)| EulerAngles::new(r, p, y))
}

/// Pitch kept 0.01 rad away from gimbal lock.
pub fn euler_off_lock() -> impl Strategy<Value = EulerAngles> {
    let lim = PI / 2.0 - 0.01;
    (angle(), -lim..lim, angle()).prop_map(|(r, p, y)| EulerAngles::new(r, p, y))
}

pub fn gear() -> impl Strategy<Value = Gear> {
    prop_oneof![Just(Gear::P), Just(Gear::R), Just(Gear::N), Just(Gear::D)]
}

pub fn lamps() -> impl Strategy<Value = Lamps> {
    (0u8..8).prop_map(|b| Lamps::from_bits(b).unwrap())
}

pub fn turn_signal() -> impl Strategy<Value = TurnSignal> {
    prop_oneof![Just(TurnSignal::Off), Just(TurnSignal::Left), Just(TurnSignal::Right)]
}

/// Throttle/brake pair in [0, 1] with at most one nonzero.
pub fn pedals() -> impl Strategy<Value = (f64, f64)> {
    (any::<bool>(), 0.0..=1.0f64).prop_map(|(t, v)| if t { (v, 0.0) } else { (0.0, v) })
}

pub fn startup() -> impl Strategy<Value = StartupMsg> {
    (vec3(), vec3(), 0.0..60.0f64, any::<bool>())
        .prop_filter("distinct endpoints", |(a, b, _, _)| a != b)
        .prop_map(|(start_position, end_position, desired_speed, startup_flag)| StartupMsg {
            start_position,
            end_position,
            desired_speed,
            startup_flag,
        })
}

pub fn localization_a() -> impl Strategy<Value = LocalizationA> {
    (vec3(), euler(), vec3(), vec3(), vec3(), angle()).prop_map(|(position, attitude, v, a, w, heading)| LocalizationA {
        position,
        attitude,
        linear_velocity: v,
        linear_acceleration: a,
        angular_velocity: w,
        heading,
    })
}

pub fn localization_b() -> impl Strategy<Value = LocalizationB> {
    (vec3(), euler(), vec3(), vec3(), vec3(), angle()).prop_map(|(position, e, v, a, w, heading)| LocalizationB {
        position,
        orientation: euler_to_quaternion(e),
        linear_velocity: v,
        linear_acceleration: a,
        angular_velocity: w,
        heading,
    })
}

pub fn control_a() -> impl Strategy<Value = ControlA> {
    (0.0..2.0f64, -0.52..0.52f64, pedals(), gear(), lamps()).prop_map(|(rate, angle, (throttle, brake), gear, lamps)| ControlA {
        steering_rate: rate,
        steering_angle: angle,
        throttle,
        brake,
        gear,
        lamps,
    })
}

pub fn control_b() -> impl Strategy<Value = ControlB> {
    (0.0..400.0f64, -100.0..=100.0f64, pedals(), gear(), lamps()).prop_map(|(rate, target, (t, b), gear, lamps)| ControlB {
        steering_rate_percent: rate,
        steering_target_percent: target,
        throttle_percent: t * 100.0,
        brake_percent: b * 100.0,
        gear,
        lamps,
    })
}

pub fn chassis_a() -> impl Strategy<Value = ChassisA> {
    (0.0..60.0f64, pedals(), -0.52..0.52f64, -2.0..2.0f64, gear(), turn_signal()).prop_map(
        |(speed, (throttle, brake), steering, steering_rate, gear, turn_signal)| ChassisA {
            speed,
            throttle,
            brake,
            steering,
            steering_rate,
            gear,
            turn_signal,
        },
    )
}

pub fn chassis_b() -> impl Strategy<Value = ChassisB> {
    (0.0..60.0f64, pedals(), -100.0..=100.0f64, -400.0..400.0f64, gear(), turn_signal()).prop_map(
        |(speed, (t, b), steering_percent, steering_rate_percent, gear, turn_signal)| ChassisB {
            speed,
            throttle_percent: t * 100.0,
            brake_percent: b * 100.0,
            steering_percent,
            steering_rate_percent,
            gear,
            turn_signal,
        },
    )
}

pub fn objects() -> impl Strategy<Value = SensorObjectList> {
    let object_type = prop_oneof![Just(ObjectType::Car), Just(ObjectType::Truck), Just(ObjectType::Unknown)];
    let status = prop_oneof![Just(SensorStatus::Ok), Just(SensorStatus::Degraded), Just(SensorStatus::Off)];
    let object = (vec3(), vec3(), angle(), 0.5..20.0f64, 0.5..3.0f64, 0.5..4.0f64, object_type);
    (proptest::collection::vec(object, 0..6), 0.0..1e4f64, status).prop_map(|(objs, stamp_s, sensor_status)| SensorObjectList {
        objects: objs
            .into_iter()
            .enumerate()
            .map(|(i, (position, velocity, heading, length, width, height, object_type))| SensorObject {
                id: i as u32 * 7 + 1,
                position,
                velocity,
                heading,
                length,
                width,
                height,
                object_type,
            })
            .collect(),
        stamp_s,
        sensor_status,
    })
}

pub fn sync() -> impl Strategy<Value = SyncMsg> {
    (any::<u64>(), any::<bool>()).prop_map(|(tick, a)| SyncMsg { tick, origin: if a { SyncOrigin::Ads } else { SyncOrigin::Dynamics } })
}

pub fn payload_a() -> impl Strategy<Value = Payload> {
    prop_oneof![
        startup().prop_map(Payload::Startup),
        localization_a().prop_map(Payload::LocalizationA),
        control_a().prop_map(Payload::ControlA),
        chassis_a().prop_map(Payload::ChassisA),
        objects().prop_map(Payload::Objects),
        sync().prop_map(Payload::Sync),
    ]
}

pub fn payload_b() -> impl Strategy<Value = Payload> {
    prop_oneof![
        startup().prop_map(Payload::Startup),
        localization_b().prop_map(Payload::LocalizationB),
        control_b().prop_map(Payload::ControlB),
        chassis_b().prop_map(Payload::ChassisB),
        objects().prop_map(Payload::Objects),
    ]
}

pub fn envelope(payload: impl Strategy<Value = Payload>) -> impl Strategy<Value = MessageEnvelope> {
    (any::<u32>(), 0.0..1e5f64, "/[a-z]{1,8}(/[a-z_]{1,8}){0,2}", payload).prop_map(|(seq, stamp_s, channel, payload)| {
        MessageEnvelope { seq: seq as u64, stamp_s, channel, payload }
    })
}

/// Least route cost by exhaustive search over the lane links of the base map.
/// A state is a lane and the fraction of it already travelled; a successor
/// move drives the rest of the lane, a lane change costs `penalty` and keeps
/// the fraction.
pub fn brute_force_route_cost(base: &BaseMap, start: (&str, f64), goal: (&str, f64), penalty: f64) -> Option<f64> {
    let lanes: HashMap<&str, _> =
        base.lanes.iter().filter(|l| l.lane_type == LaneType::Driving).map(|l| (l.lane_uid.as_str(), l)).collect();
    if !lanes.contains_key(start.0) || !lanes.contains_key(goal.0) {
        return None;
    }
    let mut best: Option<f64> = None;
    let mut visited: Vec<(String, u64)> = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn dfs<'a>(
        lanes: &HashMap<&'a str, &'a adcosim_core::map::BaseLane>,
        lane: &'a str,
        f: f64,
        cost: f64,
        goal: (&str, f64),
        penalty: f64,
        visited: &mut Vec<(String, u64)>,
        best: &mut Option<f64>,
    ) {
        if best.is_some_and(|b| cost >= b + 1e-9) {
            return;
        }
        let key = (lane.to_string(), f.to_bits());
        if visited.contains(&key) {
            return;
        }
        visited.push(key);
        let l = lanes[lane];
        if lane == goal.0 && goal.1 >= f {
            let c = cost + (goal.1 - f) * l.length;
            if best.is_none_or(|b| c < b) {
                *best = Some(c);
            }
        }
        for s in &l.successors {
            if let Some((k, _)) = lanes.get_key_value(s.as_str()) {
                dfs(lanes, k, 0.0, cost + (1.0 - f) * l.length, goal, penalty, visited, best);
            }
        }
        for n in [&l.left_neighbor, &l.right_neighbor].into_iter().flatten() {
            if let Some((k, _)) = lanes.get_key_value(n.as_str()) {
                dfs(lanes, k, f, cost + penalty, goal, penalty, visited, best);
            }
        }
        visited.pop();
    }
    let (k, _) = lanes.get_key_value(start.0)?;
    dfs(&lanes, k, start.1, 0.0, goal, penalty, &mut visited, &mut best);
    best
}

/// Point at `fraction` of the polyline's arc length.
pub fn point_along(pts: &[Point], fraction: f64) -> Point {
    let total: f64 = pts.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt()).sum();
    let mut left = fraction * total;
    for w in pts.windows(2) {
        let seg = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        if left <= seg && seg > 0.0 {
            let u = left / seg;
            return [w[0][0] + u * (w[1][0] - w[0][0]), w[0][1] + u * (w[1][1] - w[0][1])];
        }
        left -= seg;
    }
    *pts.last().unwrap()
}
