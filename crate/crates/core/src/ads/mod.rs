//! Minimal driving stack: route on startup, constant-velocity prediction,
//! IDM longitudinal planning, pure-pursuit steering and a PID pedal loop.

use std::sync::Arc;

use thiserror::Error;

use crate::frames::normalize_angle;
use crate::map::base::{dist, point_at, polyline_length, project, BaseMap};
use crate::map::routing::{route, Route, RoutingGraph};
use crate::map::sim::simplify;
use crate::map::Point;
use crate::message::{
    ChassisB, ControlB, Gear, Lamps, LocalizationB, MessageEnvelope, Payload, SensorObjectList, StartupMsg,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdsError {
    #[error("no route: {0}")]
    NoRoute(String),
    #[error("ego is {lateral:.3} m from the route centerline")]
    OffCenterline { lateral: f64 },
    #[error("localization is {age:.3} s old")]
    StaleInput { age: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub a_max: f64,
    pub b_comf: f64,
    pub s0: f64,
    pub time_headway: f64,
    pub delta: f64,
    pub accel_min: f64,
    pub lookahead_min: f64,
    pub lookahead_time: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_limit: f64,
    /// Throttle-to-acceleration gain assumed by the inverse actuator map.
    pub nominal_engine_gain: f64,
    pub max_brake: f64,
    pub drag: f64,
    pub wheelbase: f64,
    pub max_steer_angle: f64,
    pub steering_rate_percent: f64,
    pub ego_length: f64,
    pub max_centerline_offset: f64,
    pub stale_ticks: u32,
    pub prediction_horizon: f64,
    pub prediction_step: f64,
    pub dt: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            b_comf: 2.0,
            s0: 2.0,
            time_headway: 1.5,
            delta: 4.0,
            accel_min: -4.0,
            lookahead_min: 5.0,
            lookahead_time: 1.0,
            kp: 0.5,
            ki: 0.1,
            kd: 0.0,
            integral_limit: 2.0,
            nominal_engine_gain: 1.6,
            max_brake: 8.0,
            drag: 0.0004,
            wheelbase: 2.8,
            max_steer_angle: 0.52,
            steering_rate_percent: 100.0,
            ego_length: 4.7,
            max_centerline_offset: 5.0,
            stale_ticks: 5,
            prediction_horizon: 3.0,
            prediction_step: 0.1,
            dt: 0.01,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.a_max,
            self.b_comf,
            self.s0,
            self.time_headway,
            self.delta,
            self.lookahead_min,
            self.lookahead_time,
            self.nominal_engine_gain,
            self.max_brake,
            self.wheelbase,
            self.max_steer_angle,
            self.prediction_horizon,
            self.prediction_step,
            self.dt,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("planner parameters must be positive".into());
        }
        if self.accel_min >= 0.0 || self.accel_min.is_nan() {
            return Err("accel_min must be negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: u32,
    pub position: Point,
    pub velocity: Point,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    /// (t, x, y), starting at the current position.
    pub predicted_path: Vec<(f64, f64, f64)>,
}

/// Constant-velocity prediction of every perceived object.
pub fn predict(objects: &SensorObjectList, cfg: &PlannerConfig) -> Vec<Obstacle> {
    let steps = (cfg.prediction_horizon / cfg.prediction_step).round() as usize;
    objects
        .objects
        .iter()
        .map(|o| {
            let (x, y) = (o.position.x, o.position.y);
            let (vx, vy) = (o.velocity.x, o.velocity.y);
            let predicted_path = (0..=steps)
                .map(|k| {
                    let t = k as f64 * cfg.prediction_step;
                    (t, x + vx * t, y + vy * t)
                })
                .collect();
            Obstacle { id: o.id, position: [x, y], velocity: [vx, vy], heading: o.heading, length: o.length, width: o.width, predicted_path }
        })
        .collect()
}

/// Route centerline with the lane width along it.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePath {
    pub lanes: Vec<String>,
    pub points: Vec<Point>,
    /// (arc length where the lane starts, lane width)
    pub widths: Vec<(f64, f64)>,
}

impl RoutePath {
    pub fn from_route(base: &BaseMap, route: &Route) -> Result<Self, AdsError> {
        let mut dense: Vec<Point> = Vec::new();
        let mut widths = Vec::new();
        for uid in &route.lanes {
            let lane = base.lane(uid).ok_or_else(|| AdsError::NoRoute(format!("lane {uid} missing from base map")))?;
            let joint = match (dense.last(), lane.centerline.first()) {
                (Some(q), Some(p)) => dist(*q, *p),
                _ => 0.0,
            };
            widths.push((polyline_length(&dense) + joint, lane.width));
            for p in &lane.centerline {
                if !dense.last().is_some_and(|q| dist(*q, *p) < 1e-6) {
                    dense.push(*p);
                }
            }
        }
        if dense.len() < 2 {
            return Err(AdsError::NoRoute("route has no geometry".into()));
        }
        Ok(Self { lanes: route.lanes.clone(), points: simplify(&dense, 0.01), widths })
    }

    pub fn lane_width_at(&self, s: f64) -> f64 {
        self.widths.iter().rev().find(|(s0, _)| *s0 <= s).or(self.widths.first()).map_or(0.0, |w| w.1)
    }
}

/// IDM without the final clamp. The dynamic part of the desired gap is
/// floored at zero.
pub fn idm_accel_unclamped(v: f64, v0: f64, lead: Option<(f64, f64)>, cfg: &PlannerConfig) -> f64 {
    let free = 1.0 - (v / v0).powf(cfg.delta);
    match lead {
        None => cfg.a_max * free,
        Some((gap, v_lead)) => {
            let dynamic = v * cfg.time_headway + v * (v - v_lead) / (2.0 * (cfg.a_max * cfg.b_comf).sqrt());
            let s_star = cfg.s0 + dynamic.max(0.0);
            cfg.a_max * (free - (s_star / gap).powi(2))
        }
    }
}

/// `lead` is (bumper gap, lead speed).
pub fn idm_accel(v: f64, v0: f64, lead: Option<(f64, f64)>, cfg: &PlannerConfig) -> f64 {
    idm_accel_unclamped(v, v0, lead, cfg).clamp(cfg.accel_min, cfg.a_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lead {
    pub id: u32,
    pub gap: f64,
    /// Speed along the route.
    pub speed: f64,
}

/// Nearest obstacle ahead whose centre lies inside the lane corridor.
pub fn select_lead(ego: Point, obstacles: &[Obstacle], path: &RoutePath, cfg: &PlannerConfig) -> Option<Lead> {
    let (_, s_ego, _) = project(&path.points, ego);
    let half = path.lane_width_at(s_ego) / 2.0;
    obstacles
        .iter()
        .filter_map(|o| {
            let (x, y) = (o.predicted_path[0].1, o.predicted_path[0].2);
            let (_, s, lateral) = project(&path.points, [x, y]);
            if lateral.abs() > half || s <= s_ego {
                return None;
            }
            let (_, h) = point_at(&path.points, s);
            let speed = o.velocity[0] * h.cos() + o.velocity[1] * h.sin();
            Some(Lead { id: o.id, gap: s - s_ego - cfg.ego_length / 2.0 - o.length / 2.0, speed })
        })
        .min_by(|a, b| a.gap.total_cmp(&b.gap).then(a.id.cmp(&b.id)))
}

/// Road-wheel angle towards the centerline point one lookahead ahead.
pub fn pure_pursuit_steer(pos: Point, yaw: f64, centerline: &[Point], v: f64, cfg: &PlannerConfig) -> Result<f64, AdsError> {
    let (d, s, lateral) = project(centerline, pos);
    if d > cfg.max_centerline_offset {
        return Err(AdsError::OffCenterline { lateral });
    }
    let lookahead = cfg.lookahead_min.max(cfg.lookahead_time * v);
    let (target, _) = point_at(centerline, s + lookahead);
    let alpha = normalize_angle((target[1] - pos[1]).atan2(target[0] - pos[0]) - yaw);
    let delta = (2.0 * cfg.wheelbase * alpha.sin() / lookahead).atan();
    Ok(delta.clamp(-cfg.max_steer_angle, cfg.max_steer_angle))
}

/// Acceleration tracking with feedforward, mapped to pedals through a fixed
/// throttle gain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LongitudinalPid {
    pub integral: f64,
    pub last_error: Option<f64>,
}

impl LongitudinalPid {
    /// Returns (throttle, brake) fractions, never both positive.
    pub fn update(&mut self, a_cmd: f64, a_meas: f64, v: f64, cfg: &PlannerConfig) -> (f64, f64) {
        let e = a_cmd - a_meas;
        self.integral = (self.integral + e * cfg.dt).clamp(-cfg.integral_limit, cfg.integral_limit);
        let de = self.last_error.map_or(0.0, |l| (e - l) / cfg.dt);
        self.last_error = Some(e);
        let u = (a_cmd + cfg.kp * e + cfg.ki * self.integral + cfg.kd * de).clamp(cfg.accel_min, cfg.a_max);
        let force = u + cfg.drag * v * v;
        if force >= 0.0 {
            ((force / cfg.nominal_engine_gain).min(1.0), 0.0)
        } else {
            (0.0, (-force / cfg.max_brake).min(1.0))
        }
    }
}

/// One ADS tick as written to the ADS log.
#[derive(Debug, Clone, PartialEq)]
pub struct AdsLogRow {
    pub t: f64,
    pub stale: bool,
    pub lead: Option<Lead>,
    pub idm_accel: f64,
    pub lateral_error: f64,
    pub throttle_percent: f64,
    pub brake_percent: f64,
    pub steer_percent: f64,
}

#[derive(Debug, Clone)]
pub struct AdsStack {
    pub cfg: PlannerConfig,
    base: Arc<BaseMap>,
    graph: Arc<RoutingGraph>,
    pub activated: bool,
    pub route: Option<Route>,
    pub path: Option<RoutePath>,
    pub desired_speed: f64,
    localization: Option<(LocalizationB, f64)>,
    pub chassis: Option<ChassisB>,
    pub obstacles: Vec<Obstacle>,
    pid: LongitudinalPid,
    pub last_control: Option<ControlB>,
}

impl AdsStack {
    pub fn new(cfg: PlannerConfig, base: Arc<BaseMap>, graph: Arc<RoutingGraph>) -> Self {
        Self {
            cfg,
            base,
            graph,
            activated: false,
            route: None,
            path: None,
            desired_speed: 0.0,
            localization: None,
            chassis: None,
            obstacles: Vec::new(),
            pid: LongitudinalPid::default(),
            last_control: None,
        }
    }

    pub fn on_startup(&mut self, msg: &StartupMsg) -> Result<(), AdsError> {
        if !msg.startup_flag {
            return Ok(());
        }
        let start = [msg.start_position.x, msg.start_position.y];
        let goal = [msg.end_position.x, msg.end_position.y];
        let r = route(&self.base, &self.graph, start, goal).map_err(|e| AdsError::NoRoute(e.to_string()))?;
        self.path = Some(RoutePath::from_route(&self.base, &r)?);
        self.route = Some(r);
        self.desired_speed = msg.desired_speed;
        self.activated = true;
        Ok(())
    }

    /// Intake of one Dialect-B message; other payloads are ignored.
    pub fn on_message(&mut self, env: &MessageEnvelope) -> Result<(), AdsError> {
        match &env.payload {
            Payload::Startup(m) => self.on_startup(m)?,
            Payload::LocalizationB(m) => self.localization = Some((m.clone(), env.stamp_s)),
            Payload::ChassisB(m) => self.chassis = Some(m.clone()),
            Payload::Objects(m) => self.obstacles = predict(m, &self.cfg),
            _ => {}
        }
        Ok(())
    }

    fn hold(&self) -> ControlB {
        self.last_control.clone().unwrap_or(ControlB {
            steering_rate_percent: self.cfg.steering_rate_percent,
            steering_target_percent: 0.0,
            throttle_percent: 0.0,
            brake_percent: 0.0,
            gear: Gear::D,
            lamps: Lamps::default(),
        })
    }

    /// Control for time `t`, or `None` while not activated. Stale input
    /// repeats the previous command and is flagged in the log row.
    pub fn control_tick(&mut self, t: f64) -> Result<Option<(ControlB, AdsLogRow)>, AdsError> {
        if !self.activated {
            return Ok(None);
        }
        let path = self.path.as_ref().expect("activated stack has a path");
        let age = self.localization.as_ref().map_or(f64::INFINITY, |(_, stamp)| t - stamp);
        if age > self.cfg.stale_ticks as f64 * self.cfg.dt + 1e-9 {
            let c = self.hold();
            let row = AdsLogRow {
                t,
                stale: true,
                lead: None,
                idm_accel: 0.0,
                lateral_error: f64::NAN,
                throttle_percent: c.throttle_percent,
                brake_percent: c.brake_percent,
                steer_percent: c.steering_target_percent,
            };
            self.last_control = Some(c.clone());
            return Ok(Some((c, row)));
        }
        let (loc, _) = self.localization.as_ref().expect("fresh localization");
        let pos = [loc.position.x, loc.position.y];
        let v = loc.linear_velocity.norm();
        // RFU: forward is the y axis
        let a_meas = loc.linear_acceleration.y;
        let lead = select_lead(pos, &self.obstacles, path, &self.cfg);
        let a_cmd = idm_accel(v, self.desired_speed, lead.map(|l| (l.gap.max(1e-3), l.speed)), &self.cfg);
        let steer = pure_pursuit_steer(pos, loc.heading, &path.points, v, &self.cfg)?;
        let (_, _, lateral_error) = project(&path.points, pos);
        let (throttle, brake) = self.pid.update(a_cmd, a_meas, v, &self.cfg);
        let c = ControlB {
            steering_rate_percent: self.cfg.steering_rate_percent,
            steering_target_percent: (steer / self.cfg.max_steer_angle * 100.0).clamp(-100.0, 100.0),
            throttle_percent: throttle * 100.0,
            brake_percent: brake * 100.0,
            gear: Gear::D,
            lamps: Lamps::default(),
        };
        let row = AdsLogRow {
            t,
            stale: false,
            lead,
            idm_accel: a_cmd,
            lateral_error,
            throttle_percent: c.throttle_percent,
            brake_percent: c.brake_percent,
            steer_percent: c.steering_target_percent,
        };
        self.last_control = Some(c.clone());
        Ok(Some((c, row)))
    }
}
