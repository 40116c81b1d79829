//! Post-run analysis of the logs against the scenario's assertions.

use serde::{Deserialize, Serialize};

use super::log::SimLog;
use super::HarnessError;
use crate::map::base::{project, BaseMap, LaneType};
use crate::map::sim::simplify;
use crate::map::Point;
use crate::scenario::{ManeuverKind, ScenarioSpec};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingKind {
    CutIn,
    CutOut,
    LaneChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedCrossing {
    pub kind: CrossingKind,
    pub actor_id: u32,
    /// Interpolated time the actor centre crossed `line_y`, s.
    pub t_cross: f64,
    pub line_y: f64,
    /// Bumper gap to the ego at `t_cross`, m.
    pub gap_at_onset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub min: f64,
    pub t_min: f64,
    pub max: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GearShift {
    pub t: f64,
    pub from: u8,
    pub to: u8,
    /// Acceleration change across the shift tick, m/s².
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelerationPhase {
    pub t_crossing: f64,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub min_accel: Option<f64>,
    pub max_accel: Option<f64>,
    pub gear_shifts: Vec<GearShift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub lead_speed: f64,
    pub max_speed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub scenario: String,
    pub ticks: usize,
    pub dt: f64,
    pub crossings: Vec<DetectedCrossing>,
    /// Bumper gap to in-lane traffic ahead.
    pub gap: Option<Extremes>,
    pub acceleration: Extremes,
    pub max_lateral_error: f64,
    pub collision: bool,
    /// Delay from a cut-in crossing to the first negative ego acceleration.
    pub decel_onset_delay_s: Option<f64>,
    pub acceleration_phase: Option<AccelerationPhase>,
    pub speed_tracking: Vec<TrackingWindow>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
}

impl AnalysisReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

struct Geometry {
    /// Reference lines sorted top to bottom.
    lines: Vec<f64>,
}

impl Geometry {
    fn lane(&self, y: f64) -> usize {
        self.lines.iter().filter(|l| **l > y).count()
    }
}

/// Signed longitudinal separation along the ego heading and the lateral one.
fn separation(ego: (f64, f64, f64), p: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (p.0 - ego.0, p.1 - ego.1);
    let (c, s) = (ego.2.cos(), ego.2.sin());
    (dx * c + dy * s, -dx * s + dy * c)
}

fn extremes(samples: impl Iterator<Item = (f64, f64)>) -> Option<Extremes> {
    let mut out: Option<Extremes> = None;
    for (t, v) in samples {
        let e = out.get_or_insert(Extremes { min: v, t_min: t, max: v, t_max: t });
        if v < e.min {
            e.min = v;
            e.t_min = t;
        }
        if v > e.max {
            e.max = v;
            e.t_max = t;
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| format!("{v:.4}"))
}

fn check(checks: &mut Vec<Check>, name: &str, passed: bool, detail: String) {
    checks.push(Check { name: name.into(), passed, detail });
}

pub fn analyze(log: &SimLog, spec: &ScenarioSpec, base: &BaseMap) -> Result<AnalysisReport, HarnessError> {
    let n = log.dynamics.len();
    if n < 2 {
        return Err(HarnessError::IncompleteLog(format!("{n} dynamics rows")));
    }
    if log.ads.len() != n {
        return Err(HarnessError::IncompleteLog(format!("{} ADS rows for {n} dynamics rows", log.ads.len())));
    }
    if log.dynamics.iter().any(|r| r.actors.len() != log.actor_ids.len()) {
        return Err(HarnessError::IncompleteLog("actor columns do not match the header".into()));
    }
    let mut lines = spec.lane_reference_y.clone();
    lines.sort_by(|a, b| b.total_cmp(a));
    let geo = Geometry { lines };
    let dims: Vec<(f64, f64)> = log
        .actor_ids
        .iter()
        .map(|id| spec.actor(*id).map_or((4.5, 1.8), |a| (a.length, a.width)))
        .collect();
    let (le, we) = (spec.ego.length, spec.ego.width);
    let dyn_rows = &log.dynamics;

    // gap, in-lane test and overlap per tick and actor
    let mut gap_samples = Vec::new();
    let mut collision = false;
    let gap_of = |k: usize, i: usize| {
        let r = &dyn_rows[k];
        let a = r.actors[i];
        let (lon, lat) = separation((r.x, r.y, r.yaw), (a.x, a.y));
        (lon, lat, lon.abs() - (le + dims[i].0) / 2.0)
    };
    for (k, r) in dyn_rows.iter().enumerate() {
        for (i, a) in r.actors.iter().enumerate() {
            let (lon, lat, gap) = gap_of(k, i);
            if gap < 0.0 && lat.abs() < (we + dims[i].1) / 2.0 {
                collision = true;
            }
            let in_lane = if geo.lines.is_empty() { lat.abs() < 2.0 } else { geo.lane(a.y) == geo.lane(r.y) };
            if in_lane && lon > 0.0 {
                if gap <= 0.0 {
                    collision = true;
                }
                gap_samples.push((r.t, gap));
            }
        }
    }
    let gap = extremes(gap_samples.into_iter());

    let mut crossings = Vec::new();
    for (i, id) in log.actor_ids.iter().enumerate() {
        for &line in &geo.lines {
            for k in 0..n - 1 {
                let (r0, r1) = (&dyn_rows[k], &dyn_rows[k + 1]);
                let (y0, y1) = (r0.actors[i].y, r1.actors[i].y);
                if (y0 >= line) == (y1 >= line) {
                    continue;
                }
                let u = if y1 != y0 { (line - y0) / (y1 - y0) } else { 0.0 };
                let t_cross = r0.t + u * (r1.t - r0.t);
                let (lon, _, g0) = gap_of(k, i);
                let (_, _, g1) = gap_of(k + 1, i);
                let ego_lane = geo.lane(r1.y);
                let (before, after) = (geo.lane(y0), geo.lane(y1));
                let kind = if lon <= 0.0 {
                    CrossingKind::LaneChange
                } else if after == ego_lane && before != ego_lane {
                    CrossingKind::CutIn
                } else if before == ego_lane && after != ego_lane {
                    CrossingKind::CutOut
                } else {
                    CrossingKind::LaneChange
                };
                crossings.push(DetectedCrossing { kind, actor_id: *id, t_cross, line_y: line, gap_at_onset: g0 + u * (g1 - g0) });
            }
        }
    }
    crossings.sort_by(|a, b| a.t_cross.total_cmp(&b.t_cross).then(a.actor_id.cmp(&b.actor_id)));

    let acceleration = extremes(dyn_rows.iter().map(|r| (r.t, r.a))).expect("non-empty log");

    let centerlines: Vec<Vec<Point>> = base
        .lanes
        .iter()
        .filter(|l| l.lane_type == LaneType::Driving)
        .map(|l| simplify(&l.centerline, 1e-3))
        .collect();
    let max_lateral_error = dyn_rows
        .iter()
        .map(|r| centerlines.iter().map(|c| project(c, [r.x, r.y]).0).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);

    let find = |kind: CrossingKind, actor: u32| crossings.iter().find(|c| c.kind == kind && c.actor_id == actor);
    let declared = |kind: ManeuverKind| spec.declared_events.iter().find(|e| e.kind == kind);

    let decel_onset_delay_s = declared(ManeuverKind::CutIn)
        .and_then(|e| find(CrossingKind::CutIn, e.actor_id))
        .and_then(|c| dyn_rows.iter().find(|r| r.t > c.t_cross && r.a < 0.0).map(|r| r.t - c.t_cross));

    let acceleration_phase = spec.assertions.acceleration_phase.as_ref().and_then(|ap| {
        let e = declared(ManeuverKind::CutOut)?;
        let c = find(CrossingKind::CutOut, e.actor_id)?;
        let start = dyn_rows.iter().position(|r| r.t > c.t_cross && r.a > 0.0);
        let end = start.and_then(|s| {
            (s..n).find(|&k| (dyn_rows[k].v - spec.ego.desired_speed).abs() <= ap.speed_tolerance)
        });
        let window = match (start, end) {
            (Some(s), Some(e)) => &dyn_rows[s..=e],
            (Some(s), None) => &dyn_rows[s..],
            _ => &dyn_rows[0..0],
        };
        // the logged gear is the one engaged after the step, so the
        // acceleration change lands on the tick after the label change
        let (s, e) = (start.unwrap_or(n), end.unwrap_or(n - 1));
        let gear_shifts = (s.max(1)..=e.min(n - 1))
            .filter(|&k| dyn_rows[k - 1].gear != dyn_rows[k].gear)
            .map(|k| {
                let around = [dyn_rows[k].a - dyn_rows[k - 1].a, dyn_rows.get(k + 1).map_or(0.0, |r| r.a - dyn_rows[k].a)];
                let jump = if around[0].abs() >= around[1].abs() { around[0] } else { around[1] };
                GearShift { t: dyn_rows[k].t, from: dyn_rows[k - 1].gear, to: dyn_rows[k].gear, jump }
            })
            .collect();
        Some(AccelerationPhase {
            t_crossing: c.t_cross,
            t_start: start.map(|k| dyn_rows[k].t),
            t_end: end.map(|k| dyn_rows[k].t),
            min_accel: window.iter().map(|r| r.a).reduce(f64::min),
            max_accel: window.iter().map(|r| r.a).reduce(f64::max),
            gear_shifts,
        })
    });

    let mut speed_tracking = Vec::new();
    if let Some(st) = &spec.assertions.speed_tracking {
        if let Some(i) = log.actor_ids.iter().position(|id| *id == st.lead_actor_id) {
            let mut k0 = 0;
            while k0 < n {
                let v = dyn_rows[k0].actors[i].v;
                let mut k1 = k0;
                while k1 + 1 < n && (dyn_rows[k1 + 1].actors[i].v - v).abs() <= 1e-9 {
                    k1 += 1;
                }
                let (ts, te) = (dyn_rows[k0].t, dyn_rows[k1].t);
                let from = ts + st.settle_s;
                if te - from >= st.min_interval_s - 1e-9 {
                    let max_speed_error = dyn_rows[k0..=k1]
                        .iter()
                        .filter(|r| r.t >= from - 1e-9)
                        .map(|r| (r.v - v).abs())
                        .fold(0.0, f64::max);
                    speed_tracking.push(TrackingWindow { t_start: from, t_end: te, lead_speed: v, max_speed_error });
                }
                k0 = k1 + 1;
            }
        }
    }

    let mut checks = Vec::new();
    let a = &spec.assertions;
    if let Some(tol) = a.crossing_tolerance_s {
        for e in &spec.declared_events {
            let (Some(t), Some(kind)) = (
                e.t_cross,
                match e.kind {
                    ManeuverKind::CutIn => Some(CrossingKind::CutIn),
                    ManeuverKind::CutOut => Some(CrossingKind::CutOut),
                    ManeuverKind::Following => None,
                },
            ) else {
                continue;
            };
            let found = find(kind, e.actor_id);
            let passed = found.is_some_and(|c| (c.t_cross - t).abs() <= tol);
            let detail = match found {
                Some(c) => format!("detected at {:.4} s, scripted {t} s, tolerance {tol} s", c.t_cross),
                None => format!("no {} crossing detected for actor {}", e.kind.as_str(), e.actor_id),
            };
            check(&mut checks, &format!("{}_crossing_time", e.kind.as_str()), passed, detail);
        }
    }
    if let Some(limit) = a.decel_within_s {
        let passed = decel_onset_delay_s.is_some_and(|d| d <= limit + 1e-9);
        check(&mut checks, "decel_after_cut_in", passed, format!("onset delay {} s, limit {limit} s", opt(decel_onset_delay_s)));
    }
    if let Some(ap) = &a.acceleration_phase {
        match &acceleration_phase {
            Some(p) => {
                let started = p.t_start.is_some_and(|t| t - p.t_crossing <= ap.start_within_s + 1e-9);
                check(&mut checks, "acceleration_starts", started, format!("start {} s after crossing at {:.4} s", opt(p.t_start.map(|t| t - p.t_crossing)), p.t_crossing));
                let bounded = p.t_end.is_some() && p.min_accel.is_some_and(|m| m > 0.0) && p.max_accel.is_some_and(|m| m <= ap.a_max + 1e-9);
                check(
                    &mut checks,
                    "acceleration_bounded",
                    bounded,
                    format!("a in [{}, {}] until {} s, required (0, {}]", opt(p.min_accel), opt(p.max_accel), opt(p.t_end), ap.a_max),
                );
                let jump = p.gear_shifts.iter().map(|g| g.jump.abs()).fold(0.0, f64::max);
                check(
                    &mut checks,
                    "gear_shift_discontinuity",
                    jump >= ap.gear_shift_min_jump,
                    format!("{} shift(s), largest jump {jump:.4} m/s², required {}", p.gear_shifts.len(), ap.gear_shift_min_jump),
                );
            }
            None => check(&mut checks, "acceleration_starts", false, "no cut-out crossing detected".into()),
        }
    }
    if let Some(st) = &a.speed_tracking {
        let worst = speed_tracking.iter().map(|w| w.max_speed_error).fold(0.0, f64::max);
        check(
            &mut checks,
            "speed_tracking",
            !speed_tracking.is_empty() && worst <= st.tolerance,
            format!("{} window(s), worst error {worst:.4} m/s, tolerance {}", speed_tracking.len(), st.tolerance),
        );
    }
    if a.no_collision == Some(true) {
        check(&mut checks, "no_collision", !collision, format!("minimum in-lane gap {} m", opt(gap.map(|g| g.min))));
    }
    if let Some(limit) = a.max_lateral_error {
        check(&mut checks, "lane_keeping", max_lateral_error < limit, format!("max |lateral error| {max_lateral_error:.4} m, limit {limit} m"));
    }
    let verdict = if checks.iter().all(|c| c.passed) { Verdict::Pass } else { Verdict::Fail };

    Ok(AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: spec.name.clone(),
        ticks: n,
        dt: log.dt,
        crossings,
        gap,
        acceleration,
        max_lateral_error,
        collision,
        decel_onset_delay_s,
        acceleration_phase,
        speed_tracking,
        checks,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::log::{ActorSample, AdsRow, DynamicsRow};
    use crate::map::{convert, HIGHWAY_2520M_XODR};
    use crate::scenario::{make_case, CaseKind};

    /// Ego at constant speed with the scripted actors, no ADS.
    fn scripted_log(spec: &ScenarioSpec, v: f64) -> SimLog {
        let n = (spec.duration_s * 100.0) as u64;
        let dynamics = (0..n)
            .map(|k| {
                let t = k as f64 / 100.0;
                DynamicsRow {
                    tick: k,
                    t,
                    x: spec.ego.init_x + v * t,
                    y: spec.ego.init_y,
                    yaw: 0.0,
                    v,
                    a: 0.0,
                    gear: 4,
                    steer: 0.0,
                    actors: crate::dynamics::playback_traffic(spec, t).iter().map(|a| ActorSample { x: a.x, y: a.y, v: a.speed }).collect(),
                }
            })
            .collect();
        let ads = (0..n)
            .map(|k| AdsRow {
                tick: k,
                t: k as f64 / 100.0,
                active: true,
                stale: false,
                lead_id: None,
                gap: None,
                lead_speed: None,
                idm_accel: 0.0,
                lateral_error: 0.0,
                throttle_percent: 0.0,
                brake_percent: 0.0,
                steer_percent: 0.0,
            })
            .collect();
        SimLog { dt: 0.01, actor_ids: spec.traffic.iter().map(|a| a.actor_id).collect(), dynamics, bridge: Vec::new(), ads }
    }

    #[test]
    fn recovers_scripted_crossings() {
        let m = convert(HIGHWAY_2520M_XODR, 1.0, 0.5).unwrap();
        let spec = make_case(CaseKind::CutIn);
        let r = analyze(&scripted_log(&spec, 25.0), &spec, &m.base).unwrap();
        assert_eq!(r.crossings.len(), 1);
        assert_eq!(r.crossings[0].kind, CrossingKind::CutIn);
        assert!((r.crossings[0].t_cross - 50.188).abs() < 1e-6, "{}", r.crossings[0].t_cross);
        assert!((r.crossings[0].gap_at_onset - 37.0).abs() < 0.1);
        assert!(r.max_lateral_error < 1e-9);
        // the constant-speed ego never decelerates
        assert!(!r.passed());

        let spec = make_case(CaseKind::CutOut);
        let r = analyze(&scripted_log(&spec, 18.5), &spec, &m.base).unwrap();
        assert_eq!(r.crossings[0].kind, CrossingKind::CutOut);
        assert!((r.crossings[0].t_cross - 53.8).abs() < 1e-9);
    }

    #[test]
    fn following_has_no_crossing() {
        let m = convert(HIGHWAY_2520M_XODR, 1.0, 0.5).unwrap();
        let spec = make_case(CaseKind::Following);
        let r = analyze(&scripted_log(&spec, 20.0), &spec, &m.base).unwrap();
        assert!(r.crossings.is_empty());
        let g = r.gap.unwrap();
        assert!(g.min > 30.0 && g.max > g.min);
        assert_eq!(r.speed_tracking.len(), 2);
        assert_eq!(r.speed_tracking[0].t_start, 10.0);
        assert!(r.speed_tracking[0].max_speed_error < 1e-9);
        assert!((r.speed_tracking[1].max_speed_error - 5.0).abs() < 1e-9);
        assert!(!r.collision);
    }

    #[test]
    fn collision_is_flagged() {
        let m = convert(HIGHWAY_2520M_XODR, 1.0, 0.5).unwrap();
        let spec = make_case(CaseKind::Following);
        let mut log = scripted_log(&spec, 20.0);
        for r in &mut log.dynamics {
            r.x = r.actors[0].x - 3.0;
        }
        let r = analyze(&log, &spec, &m.base).unwrap();
        assert!(r.collision);
        assert!(!r.passed());
    }

    #[test]
    fn truncated_log() {
        let m = convert(HIGHWAY_2520M_XODR, 1.0, 0.5).unwrap();
        let spec = make_case(CaseKind::Following);
        let mut log = scripted_log(&spec, 20.0);
        log.ads.pop();
        assert!(matches!(analyze(&log, &spec, &m.base), Err(HarnessError::IncompleteLog(_))));
    }
}
