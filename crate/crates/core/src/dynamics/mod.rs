//! Ego plant, scripted traffic playback and the ground-truth object sensor.

use std::f64::consts::PI;

use crate::frames::{normalize_angle, EulerAngles, Vec3};
use crate::message::{
    ChassisA, ControlA, Gear, LocalizationA, ObjectType, SensorObject, SensorObjectList, SensorStatus, StartupMsg,
    TurnSignal,
};
use crate::scenario::cases::interpolate;
use crate::scenario::ScenarioSpec;

pub const DEFAULT_DT: f64 = 0.01;

/// Time of tick `k`. Integral tick rates divide instead of multiplying so
/// that e.g. tick 29 at 100 Hz is exactly 0.29.
pub fn tick_time(k: u64, dt: f64) -> f64 {
    let rate = 1.0 / dt;
    if (rate - rate.round()).abs() < 1e-9 {
        k as f64 / rate.round()
    } else {
        k as f64 * dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer_angle: f64,
    /// Engine acceleration cap per gear, m/s².
    pub engine_caps: [f64; 4],
    /// Upshift speeds 1→2, 2→3, 3→4, m/s.
    pub upshift_speeds: [f64; 3],
    pub shift_hysteresis: f64,
    pub max_brake: f64,
    /// 1/m
    pub drag: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            max_steer_angle: 0.52,
            engine_caps: [3.0, 2.2, 1.6, 1.2],
            upshift_speeds: [8.0, 14.0, 20.0],
            shift_hysteresis: 0.5,
            max_brake: 8.0,
            drag: 0.0004,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [self.wheelbase, self.max_steer_angle, self.shift_hysteresis, self.max_brake, self.drag];
        if positive.iter().chain(&self.engine_caps).chain(&self.upshift_speeds).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("vehicle parameters must be positive".into());
        }
        let mut lower = 0.0;
        for s in self.upshift_speeds {
            if s - lower <= self.shift_hysteresis {
                return Err("shift hysteresis must be smaller than the gap between shift speeds".into());
            }
            lower = s;
        }
        Ok(())
    }

    /// Gear 1..=4 for a standing start at speed `v`.
    pub fn gear_for_speed(&self, v: f64) -> u8 {
        1 + self.upshift_speeds.iter().filter(|&&s| v >= s).count() as u8
    }

    pub fn engine_cap(&self, gear: u8) -> f64 {
        self.engine_caps[(gear.clamp(1, 4) - 1) as usize]
    }

    /// At most one shift per call.
    pub fn shift(&self, gear: u8, v: f64) -> u8 {
        let g = gear.clamp(1, 4);
        if g < 4 && v >= self.upshift_speeds[(g - 1) as usize] {
            g + 1
        } else if g > 1 && v < self.upshift_speeds[(g - 2) as usize] - self.shift_hysteresis {
            g - 1
        } else {
            g
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub range: f64,
    /// Full horizontal opening angle, degrees.
    pub fov_deg: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { range: 300.0, fov_deg: 120.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v: f64,
    pub a: f64,
    pub steer: f64,
    pub yaw_rate: f64,
    pub gear: u8,
    pub odometer: f64,
}

impl EgoState {
    pub fn at_rest(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw, v: 0.0, a: 0.0, steer: 0.0, yaw_rate: 0.0, gear: 1, odometer: 0.0 }
    }
}

/// Coasting command: no pedal, wheels straight.
pub fn neutral_control() -> ControlA {
    ControlA { steering_rate: 0.0, steering_angle: 0.0, throttle: 0.0, brake: 0.0, gear: Gear::D, lamps: Default::default() }
}

/// One semi-implicit Euler step of the kinematic bicycle.
pub fn step_ego(state: &EgoState, control: &ControlA, dt: f64, p: &VehicleParams) -> EgoState {
    let throttle = if control.gear == Gear::D { control.throttle } else { 0.0 };
    let target = control.steering_angle.clamp(-p.max_steer_angle, p.max_steer_angle);
    let steer = if control.steering_rate > 0.0 {
        let max = control.steering_rate * dt;
        state.steer + (target - state.steer).clamp(-max, max)
    } else {
        target
    };
    let a = throttle * p.engine_cap(state.gear) - control.brake * p.max_brake - p.drag * state.v * state.v;
    let v = (state.v + a * dt).max(0.0);
    let yaw_rate = v / p.wheelbase * steer.tan();
    let yaw = state.yaw + yaw_rate * dt;
    EgoState {
        x: state.x + v * yaw.cos() * dt,
        y: state.y + v * yaw.sin() * dt,
        yaw,
        v,
        a,
        steer,
        yaw_rate,
        gear: p.shift(state.gear, v),
        odometer: state.odometer + v * dt,
    }
}

pub fn emit_localization(state: &EgoState) -> LocalizationA {
    LocalizationA {
        position: Vec3::new(state.x, state.y, 0.0),
        attitude: EulerAngles::new(0.0, 0.0, state.yaw),
        linear_velocity: Vec3::new(state.v, 0.0, 0.0),
        linear_acceleration: Vec3::new(state.a, 0.0, 0.0),
        angular_velocity: Vec3::new(0.0, 0.0, state.yaw_rate),
        heading: normalize_angle(state.yaw),
    }
}

pub fn emit_chassis(state: &EgoState, control: &ControlA) -> ChassisA {
    let turn_signal = match (control.lamps.left_turn, control.lamps.right_turn) {
        (true, false) => TurnSignal::Left,
        (false, true) => TurnSignal::Right,
        _ => TurnSignal::Off,
    };
    ChassisA {
        speed: state.v,
        throttle: control.throttle,
        brake: control.brake,
        steering: state.steer,
        steering_rate: control.steering_rate,
        gear: Gear::D,
        turn_signal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficState {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

/// Scripted actors at time `t`, holding the last sample past the end.
pub fn playback_traffic(spec: &ScenarioSpec, t: f64) -> Vec<TrafficState> {
    spec.traffic
        .iter()
        .map(|a| {
            let s = interpolate(&a.trajectory, t);
            TrafficState { id: a.actor_id, x: s.x, y: s.y, speed: s.speed, heading: s.heading, length: a.length, width: a.width }
        })
        .collect()
}

pub fn sense_objects(ego: &EgoState, traffic: &[TrafficState], cfg: &SensorConfig, stamp_s: f64) -> SensorObjectList {
    let half_fov = cfg.fov_deg.to_radians() / 2.0;
    let objects = traffic
        .iter()
        .filter(|o| {
            let (dx, dy) = (o.x - ego.x, o.y - ego.y);
            let bearing = normalize_angle(dy.atan2(dx) - ego.yaw);
            dx.hypot(dy) <= cfg.range && (bearing.abs() <= half_fov || half_fov >= PI)
        })
        .map(|o| SensorObject {
            id: o.id,
            position: Vec3::new(o.x, o.y, 0.0),
            velocity: Vec3::new(o.speed * o.heading.cos(), o.speed * o.heading.sin(), 0.0),
            heading: o.heading,
            length: o.length,
            width: o.width,
            height: 1.5,
            object_type: ObjectType::Car,
        })
        .collect();
    SensorObjectList { objects, stamp_s, sensor_status: SensorStatus::Ok }
}

/// The plant driven by one scenario.
#[derive(Debug, Clone)]
pub struct DynamicsSim {
    pub spec: ScenarioSpec,
    pub params: VehicleParams,
    pub sensor: SensorConfig,
    pub dt: f64,
    pub state: EgoState,
    pub control: ControlA,
    pub tick: u64,
}

impl DynamicsSim {
    pub fn new(spec: ScenarioSpec, params: VehicleParams, sensor: SensorConfig, dt: f64) -> Self {
        let e = &spec.ego;
        let state = EgoState {
            v: e.init_speed,
            gear: params.gear_for_speed(e.init_speed),
            ..EgoState::at_rest(e.init_x, e.init_y, e.init_heading)
        };
        Self { spec, params, sensor, dt, state, control: neutral_control(), tick: 0 }
    }

    pub fn time(&self) -> f64 {
        tick_time(self.tick, self.dt)
    }

    pub fn startup(&self) -> StartupMsg {
        let e = &self.spec.ego;
        StartupMsg {
            start_position: Vec3::new(e.init_x, e.init_y, 0.0),
            end_position: Vec3::new(e.goal_x, e.goal_y, 0.0),
            desired_speed: e.desired_speed,
            startup_flag: true,
        }
    }

    /// Advances one tick with the control held from the previous one.
    pub fn advance(&mut self) {
        self.state = step_ego(&self.state, &self.control, self.dt, &self.params);
        self.tick += 1;
    }

    pub fn traffic(&self) -> Vec<TrafficState> {
        playback_traffic(&self.spec, self.time())
    }

    pub fn localization(&self) -> LocalizationA {
        emit_localization(&self.state)
    }

    pub fn chassis(&self) -> ChassisA {
        emit_chassis(&self.state, &self.control)
    }

    pub fn objects(&self) -> SensorObjectList {
        sense_objects(&self.state, &self.traffic(), &self.sensor, self.time())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::converters::convert_localization;
    use crate::scenario::{make_case, CaseKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn throttle_for(a: f64, s: &EgoState, p: &VehicleParams) -> ControlA {
        ControlA { throttle: (a + p.drag * s.v * s.v) / p.engine_cap(s.gear), ..neutral_control() }
    }

    #[test]
    fn semi_implicit_step() {
        let p = VehicleParams::default();
        let s = EgoState { v: 10.0, gear: 2, ..EgoState::at_rest(0.0, 0.0, 0.0) };
        let n = step_ego(&s, &throttle_for(1.0, &s, &p), 0.01, &p);
        assert_abs_diff_eq!(n.v, 10.01, epsilon = 1e-12);
        assert_abs_diff_eq!(n.x, 0.1001, epsilon = 1e-12);
        assert_eq!(n.y, 0.0);
        assert_abs_diff_eq!(n.a, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rest_is_equilibrium() {
        let p = VehicleParams::default();
        let s = EgoState::at_rest(3.0, -27.0, 0.2);
        let n = step_ego(&s, &neutral_control(), 0.01, &p);
        assert_eq!((n.x, n.y, n.yaw, n.v, n.a), (s.x, s.y, s.yaw, 0.0, 0.0));
    }

    #[test]
    fn upshift_drops_engine_cap() {
        let p = VehicleParams::default();
        let mut s = EgoState { v: 13.995, gear: 2, ..EgoState::at_rest(0.0, 0.0, 0.0) };
        let full = ControlA { throttle: 1.0, ..neutral_control() };
        s = step_ego(&s, &full, 0.01, &p);
        assert_eq!(s.gear, 3);
        let (before, v_before) = (s.a, s.v);
        s = step_ego(&s, &full, 0.01, &p);
        let oracle = 1.6 - 0.0004 * v_before * v_before;
        assert_abs_diff_eq!(s.a, oracle, epsilon = 1e-12);
        assert!(before - s.a > 0.59);
    }

    #[test]
    fn gear_hysteresis_does_not_chatter() {
        let p = VehicleParams::default();
        let mut g = p.shift(2, 14.0);
        assert_eq!(g, 3);
        for k in 0..200 {
            let v = 14.0 + 0.4 * (k as f64 * 0.3).sin();
            g = p.shift(g, v);
            assert_eq!(g, 3, "v = {v}");
        }
        assert_eq!(p.shift(3, 13.49), 2);
    }

    #[test]
    fn sensor_examples() {
        let ego = EgoState::at_rest(0.0, 0.0, 0.0);
        let car = |id, x: f64| TrafficState { id, x, y: 0.0, speed: 0.0, heading: 0.0, length: 4.5, width: 1.8 };
        let list = sense_objects(&ego, &[car(1, 50.0), car(2, -10.0), car(3, 350.0)], &SensorConfig::default(), 1.0);
        assert_eq!(list.objects.iter().map(|o| o.id).collect::<Vec<_>>(), vec![1]);
        assert_eq!(list.sensor_status, SensorStatus::Ok);
        assert_eq!(list.stamp_s, 1.0);
    }

    #[test]
    fn playback_interpolates_and_holds() {
        let spec = make_case(CaseKind::Following);
        let traj = &spec.traffic[0].trajectory;
        let at = playback_traffic(&spec, traj[3].t)[0];
        assert_eq!((at.x, at.y), (traj[3].x, traj[3].y));
        let mid = playback_traffic(&spec, (traj[3].t + traj[4].t) / 2.0)[0];
        assert_abs_diff_eq!(mid.x, (traj[3].x + traj[4].x) / 2.0, epsilon = 1e-9);
        let last = traj.last().unwrap();
        assert_eq!(playback_traffic(&spec, 1e6)[0].x, last.x);
    }

    #[test]
    fn localization_is_body_frame() {
        let s = EgoState { v: 20.0, yaw_rate: 0.1, ..EgoState::at_rest(1.0, 2.0, 0.0) };
        let l = emit_localization(&s);
        assert_eq!(l.linear_velocity, Vec3::new(20.0, 0.0, 0.0));
        assert_eq!(l.angular_velocity, Vec3::new(0.0, 0.0, 0.1));
        let b = convert_localization(&l);
        assert_abs_diff_eq!(b.linear_velocity.norm(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn params_validate() {
        assert!(VehicleParams::default().validate().is_ok());
        let bad = VehicleParams { shift_hysteresis: 7.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn coasting_decays_monotonically(v0 in 0.0f64..60.0) {
            let p = VehicleParams::default();
            let mut s = EgoState { v: v0, gear: p.gear_for_speed(v0), ..EgoState::at_rest(0.0, 0.0, 0.0) };
            for _ in 0..500 {
                let n = step_ego(&s, &neutral_control(), 0.01, &p);
                prop_assert!(n.v <= s.v);
                prop_assert!(n.v >= 0.0);
                s = n;
            }
        }

        #[test]
        fn straight_line_keeps_lateral_state(v0 in 0.0f64..50.0, throttle in 0.0f64..1.0, y0 in -50.0f64..50.0) {
            let p = VehicleParams::default();
            let mut s = EgoState { v: v0, gear: p.gear_for_speed(v0), ..EgoState::at_rest(0.0, y0, 0.0) };
            let c = ControlA { throttle, ..neutral_control() };
            for _ in 0..300 {
                s = step_ego(&s, &c, 0.01, &p);
            }
            prop_assert!((s.y - y0).abs() <= 1e-12);
            prop_assert!(s.yaw.abs() <= 1e-12);
        }

        #[test]
        fn sensor_range_is_monotone(xs in prop::collection::vec((-400.0f64..400.0, -400.0f64..400.0), 0..20), r in 1.0f64..400.0, extra in 0.0f64..200.0) {
            let ego = EgoState::at_rest(0.0, 0.0, 0.3);
            let traffic: Vec<TrafficState> = xs.iter().enumerate().map(|(i, (x, y))| TrafficState { id: i as u32, x: *x, y: *y, speed: 1.0, heading: 0.0, length: 4.0, width: 2.0 }).collect();
            let small = sense_objects(&ego, &traffic, &SensorConfig { range: r, fov_deg: 120.0 }, 0.0);
            let large = sense_objects(&ego, &traffic, &SensorConfig { range: r + extra, fov_deg: 120.0 }, 0.0);
            for o in &small.objects {
                prop_assert!(large.objects.iter().any(|q| q.id == o.id));
            }
        }
    }
}
