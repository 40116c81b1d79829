//! Scripted cases on the straight highway and synthetic highD fixtures.

use std::f64::consts::PI;

use super::highd::{TrackRow, TrackTable};
use super::{
    AccelerationPhase, Assertions, DeclaredEvent, EgoSpec, ManeuverKind, ScenarioSpec, SpeedTracking, TrafficActor,
    TrajectorySample, SCENARIO_SCHEMA_VERSION,
};

pub const CASE_MAP: &str = "highway_2520m.xodr";
/// Lane boundary lines of the shipped highway, m.
pub const LANE_LINES_Y: [f64; 3] = [-21.0, -25.0, -29.0];
pub const LEFT_LANE_Y: f64 = -23.0;
pub const RIGHT_LANE_Y: f64 = -27.0;
pub const EGO_LENGTH: f64 = 4.7;
pub const EGO_WIDTH: f64 = 1.9;
pub const CAR_LENGTH: f64 = 4.5;
pub const CAR_WIDTH: f64 = 1.8;
/// Duration of a scripted lane change, s.
pub const LANE_CHANGE_S: f64 = 4.0;

pub const CUT_IN_CROSSING_S: f64 = 50.188;
pub const CUT_OUT_CROSSING_S: f64 = 53.8;

const SAMPLE_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseKind {
    CutIn,
    CutOut,
    Following,
}

impl CaseKind {
    pub const ALL: [CaseKind; 3] = [CaseKind::CutIn, CaseKind::CutOut, CaseKind::Following];

    /// Accepts `case1`..`case3` or the maneuver name.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "case1" | "cut_in" | "cut-in" => Some(CaseKind::CutIn),
            "case2" | "cut_out" | "cut-out" => Some(CaseKind::CutOut),
            "case3" | "following" => Some(CaseKind::Following),
            _ => None,
        }
    }

    pub fn case_name(&self) -> &'static str {
        match self {
            CaseKind::CutIn => "case1",
            CaseKind::CutOut => "case2",
            CaseKind::Following => "case3",
        }
    }
}

/// Speed from piecewise-constant acceleration phases `(t0, t1, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    pub v0: f64,
    pub phases: Vec<(f64, f64, f64)>,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        Self { v0: v, phases: Vec::new() }
    }

    pub fn speed(&self, t: f64) -> f64 {
        self.v0 + self.phases.iter().map(|&(a, b, acc)| acc * (t.min(b) - a).max(0.0)).sum::<f64>()
    }

    /// Distance covered since t = 0.
    pub fn distance(&self, t: f64) -> f64 {
        let mut d = self.v0 * t;
        for &(a, b, acc) in &self.phases {
            if t <= a {
                continue;
            }
            let inside = t.min(b) - a;
            d += 0.5 * acc * inside * inside + acc * inside * (t - t.min(b));
        }
        d
    }
}

/// Cosine lane change centred on the crossing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChange {
    pub t_cross: f64,
    pub from_y: f64,
    pub to_y: f64,
    pub duration: f64,
}

impl LaneChange {
    pub fn start(&self) -> f64 {
        self.t_cross - self.duration / 2.0
    }

    pub fn end(&self) -> f64 {
        self.t_cross + self.duration / 2.0
    }

    /// Lateral position and velocity.
    pub fn lateral(&self, t: f64) -> (f64, f64) {
        let tau = (t - self.start()).clamp(0.0, self.duration);
        let dy = self.to_y - self.from_y;
        let y = self.from_y + dy * (1.0 - (PI * tau / self.duration).cos()) / 2.0;
        let inside = t > self.start() && t < self.end();
        let vy = if inside { dy * PI / (2.0 * self.duration) * (PI * tau / self.duration).sin() } else { 0.0 };
        (y, vy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorScript {
    pub id: u32,
    pub length: f64,
    pub width: f64,
    pub x0: f64,
    pub y0: f64,
    pub speed: SpeedProfile,
    pub lane_change: Option<LaneChange>,
}

impl ActorScript {
    pub fn sample(&self, t: f64) -> TrajectorySample {
        let (y, vy) = self.lane_change.map_or((self.y0, 0.0), |lc| lc.lateral(t));
        let v = self.speed.speed(t);
        TrajectorySample { t, x: self.x0 + self.speed.distance(t), y, speed: v.hypot(vy), heading: vy.atan2(v) }
    }

    /// Samples every 0.1 s; inside a lane change the grid is anchored on the
    /// crossing time so the crossing itself is a sample.
    pub fn trajectory(&self, duration: f64) -> Vec<TrajectorySample> {
        let n = (duration / SAMPLE_STEP).round() as i64;
        let mut times: Vec<f64> = Vec::with_capacity(n as usize + 1);
        let window = self.lane_change.map(|lc| (lc.start(), lc.end()));
        for k in 0..=n {
            let t = k as f64 / 10.0;
            if window.is_some_and(|(a, b)| t >= a - 1e-9 && t <= b + 1e-9) {
                continue;
            }
            times.push(t);
        }
        if let Some(lc) = self.lane_change {
            let half = (lc.duration / 2.0 / SAMPLE_STEP).round() as i64;
            for j in -half..=half {
                let t = lc.t_cross + j as f64 / 10.0;
                if (0.0..=duration).contains(&t) {
                    times.push(t);
                }
            }
        }
        times.sort_by(f64::total_cmp);
        times.into_iter().map(|t| self.sample(t)).collect()
    }

    pub fn to_actor(&self, duration: f64) -> TrafficActor {
        TrafficActor { actor_id: self.id, length: self.length, width: self.width, trajectory: self.trajectory(duration) }
    }
}

fn ego(x0: f64, speed: f64, desired: f64) -> EgoSpec {
    // highway_2520m: six 420 m roads starting at x = 0
    let road = |x: f64| ((x / 420.0).floor() as i64).clamp(0, 5) + 1;
    let goal_x = 2500.0;
    EgoSpec {
        init_lane_uid: format!("{}.0.-2", road(x0)),
        init_s: x0 - 420.0 * (road(x0) - 1) as f64,
        init_x: x0,
        init_y: RIGHT_LANE_Y,
        init_heading: 0.0,
        init_speed: speed,
        desired_speed: desired,
        goal_s: goal_x - 420.0 * (road(goal_x) - 1) as f64,
        goal_x,
        goal_y: RIGHT_LANE_Y,
        length: EGO_LENGTH,
        width: EGO_WIDTH,
    }
}

/// Centre x of a car whose rear bumper is `gap` ahead of the ego front.
fn ahead_of_ego(ego_x: f64, gap: f64) -> f64 {
    ego_x + EGO_LENGTH / 2.0 + gap + CAR_LENGTH / 2.0
}

/// IDM equilibrium gap at speed `v` for desired speed `v0` with the ADS
/// defaults (s0 = 2 m, T = 1.5 s, delta = 4).
fn equilibrium_gap(v: f64, v0: f64) -> f64 {
    (2.0 + v * 1.5) / (1.0 - (v / v0).powi(4)).sqrt()
}

fn base_assertions() -> Assertions {
    Assertions { max_lateral_error: Some(0.3), no_collision: Some(true), ..Assertions::default() }
}

fn spec(name: &str, duration: f64, ego: EgoSpec, actors: &[ActorScript], events: Vec<DeclaredEvent>, assertions: Assertions) -> ScenarioSpec {
    ScenarioSpec {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: name.into(),
        map_ref: CASE_MAP.into(),
        duration_s: duration,
        ego,
        traffic: actors.iter().map(|a| a.to_actor(duration)).collect(),
        declared_events: events,
        assertions,
        lane_reference_y: LANE_LINES_Y.to_vec(),
    }
}

pub fn case_actors(kind: CaseKind) -> Vec<ActorScript> {
    let ego_x0 = 100.0;
    match kind {
        CaseKind::CutIn => {
            // Overtakes at 27 m/s in the left lane, cuts in about 37 m ahead,
            // then slows to 22 m/s.
            let end = CUT_IN_CROSSING_S + LANE_CHANGE_S / 2.0;
            let x_cross = ahead_of_ego(ego_x0 + 25.0 * CUT_IN_CROSSING_S, 37.0);
            vec![ActorScript {
                id: 1,
                length: CAR_LENGTH,
                width: CAR_WIDTH,
                x0: ((x_cross - 27.0 * CUT_IN_CROSSING_S) * 10.0).round() / 10.0,
                y0: LEFT_LANE_Y,
                speed: SpeedProfile { v0: 27.0, phases: vec![(end, end + 5.0, -1.0)] },
                lane_change: Some(LaneChange { t_cross: CUT_IN_CROSSING_S, from_y: LEFT_LANE_Y, to_y: RIGHT_LANE_Y, duration: LANE_CHANGE_S }),
            }]
        }
        CaseKind::CutOut => {
            let v = 18.5;
            vec![ActorScript {
                id: 1,
                length: CAR_LENGTH,
                width: CAR_WIDTH,
                x0: (ahead_of_ego(ego_x0, equilibrium_gap(v, 25.0)) * 10.0).round() / 10.0,
                y0: RIGHT_LANE_Y,
                speed: SpeedProfile::constant(v),
                lane_change: Some(LaneChange { t_cross: CUT_OUT_CROSSING_S, from_y: RIGHT_LANE_Y, to_y: LEFT_LANE_Y, duration: LANE_CHANGE_S }),
            }]
        }
        CaseKind::Following => vec![ActorScript {
            id: 1,
            length: CAR_LENGTH,
            width: CAR_WIDTH,
            x0: (ahead_of_ego(ego_x0, equilibrium_gap(20.0, 33.0)) * 10.0).round() / 10.0,
            y0: RIGHT_LANE_Y,
            speed: SpeedProfile { v0: 20.0, phases: vec![(40.0, 50.0, 0.5)] },
            lane_change: None,
        }],
    }
}

/// The three shipped cases on `highway_2520m.xodr`.
pub fn make_case(kind: CaseKind) -> ScenarioSpec {
    let actors = case_actors(kind);
    let lane_change_event = |k: ManeuverKind, t: f64| DeclaredEvent {
        kind: k,
        actor_id: 1,
        t_start: t - LANE_CHANGE_S / 2.0,
        t_cross: Some(t),
        t_end: t + LANE_CHANGE_S / 2.0,
    };
    match kind {
        CaseKind::CutIn => spec(
            "case1_cut_in",
            70.0,
            ego(100.0, 25.0, 25.0),
            &actors,
            vec![lane_change_event(ManeuverKind::CutIn, CUT_IN_CROSSING_S)],
            Assertions { decel_within_s: Some(1.0), crossing_tolerance_s: Some(0.02), ..base_assertions() },
        ),
        CaseKind::CutOut => spec(
            "case2_cut_out",
            90.0,
            ego(100.0, 18.5, 25.0),
            &actors,
            vec![lane_change_event(ManeuverKind::CutOut, CUT_OUT_CROSSING_S)],
            Assertions {
                acceleration_phase: Some(AccelerationPhase {
                    start_within_s: 1.0,
                    a_max: 1.0,
                    speed_tolerance: 0.1,
                    gear_shift_min_jump: 0.05,
                }),
                crossing_tolerance_s: Some(0.02),
                ..base_assertions()
            },
        ),
        CaseKind::Following => spec(
            "case3_following",
            80.0,
            ego(100.0, 20.0, 33.0),
            &actors,
            vec![DeclaredEvent { kind: ManeuverKind::Following, actor_id: 1, t_start: 0.0, t_cross: None, t_end: 80.0 }],
            Assertions {
                speed_tracking: Some(SpeedTracking { lead_actor_id: 1, settle_s: 10.0, min_interval_s: 5.0, tolerance: 1.0 }),
                ..base_assertions()
            },
        ),
    }
}

/// Lane numbering of the synthetic highD tables: 3 is the left lane, 2 the
/// right lane, 1 the shoulder, 4 beyond the left edge.
pub fn synthetic_lane_id(y: f64) -> i64 {
    if y >= -21.0 {
        4
    } else if y >= -25.0 {
        3
    } else if y >= -29.0 {
        2
    } else {
        1
    }
}

/// Linear interpolation of a trajectory, holding the end samples.
pub fn interpolate(traj: &[TrajectorySample], t: f64) -> TrajectorySample {
    let first = traj[0];
    let last = traj[traj.len() - 1];
    if t <= first.t {
        return TrajectorySample { t, ..first };
    }
    if t >= last.t {
        return TrajectorySample { t, ..last };
    }
    let i = traj.partition_point(|s| s.t <= t);
    let (a, b) = (traj[i - 1], traj[i]);
    let u = (t - a.t) / (b.t - a.t);
    let lerp = |p: f64, q: f64| p + u * (q - p);
    TrajectorySample { t, x: lerp(a.x, b.x), y: lerp(a.y, b.y), speed: lerp(a.speed, b.speed), heading: lerp(a.heading, b.heading) }
}

/// A highD-style table of `frames` frames: the ego (id 1) drives its lane at
/// constant initial speed and every actor (id = actor_id + 1) follows its
/// trajectory.
pub fn tracks_from_spec(spec: &ScenarioSpec, frame_rate: f64, frames: i64) -> TrackTable {
    let mut rows = Vec::new();
    for f in 0..frames {
        let t = f as f64 / frame_rate;
        let e = &spec.ego;
        let (ex, ey) = (e.init_x + e.init_speed * t, e.init_y);
        rows.push(TrackRow {
            frame: f,
            id: 1,
            x: ex - e.length / 2.0,
            y: ey - e.width / 2.0,
            x_velocity: e.init_speed,
            y_velocity: 0.0,
            width: e.length,
            height: e.width,
            lane_id: synthetic_lane_id(ey),
        });
        for a in &spec.traffic {
            let s = interpolate(&a.trajectory, t);
            rows.push(TrackRow {
                frame: f,
                id: i64::from(a.actor_id) + 1,
                x: s.x - a.length / 2.0,
                y: s.y - a.width / 2.0,
                x_velocity: s.speed * s.heading.cos(),
                y_velocity: s.speed * s.heading.sin(),
                width: a.length,
                height: a.width,
                lane_id: synthetic_lane_id(s.y),
            });
        }
    }
    TrackTable::from_rows(rows, frame_rate).expect("generated tracks are contiguous")
}

pub const FIXTURE_FRAMES: i64 = 1500;
pub const FIXTURE_FRAME_RATE: f64 = 25.0;
/// Scripted crossing times of the fixtures. Frames are 0.04 s apart, so a
/// crossing at 27.98 s makes frame 700 the first frame in the new lane.
pub const FIXTURE_CUT_IN_CROSSING_S: f64 = 27.98;
pub const FIXTURE_CUT_OUT_CROSSING_S: f64 = 29.98;

/// Scenario behind a synthetic highD fixture: 60 s, ego plus two cars.
pub fn fixture_spec(kind: CaseKind) -> ScenarioSpec {
    let duration = FIXTURE_FRAMES as f64 / FIXTURE_FRAME_RATE;
    let ego_x0 = 50.0;
    let car = |id, x0, y0, v, lane_change| ActorScript { id, length: CAR_LENGTH, width: CAR_WIDTH, x0, y0, speed: SpeedProfile::constant(v), lane_change };
    let (actors, event) = match kind {
        CaseKind::CutIn => (
            vec![
                car(1, ahead_of_ego(ego_x0, 40.0), LEFT_LANE_Y, 25.0, Some(LaneChange {
                    t_cross: FIXTURE_CUT_IN_CROSSING_S,
                    from_y: LEFT_LANE_Y,
                    to_y: RIGHT_LANE_Y,
                    duration: LANE_CHANGE_S,
                })),
                car(2, ego_x0 - 50.0, LEFT_LANE_Y, 25.0, None),
            ],
            ManeuverKind::CutIn,
        ),
        CaseKind::CutOut => (
            vec![
                car(1, ahead_of_ego(ego_x0, 30.0), RIGHT_LANE_Y, 25.0, Some(LaneChange {
                    t_cross: FIXTURE_CUT_OUT_CROSSING_S,
                    from_y: RIGHT_LANE_Y,
                    to_y: LEFT_LANE_Y,
                    duration: LANE_CHANGE_S,
                })),
                car(2, ego_x0 + 250.0, LEFT_LANE_Y, 25.0, None),
            ],
            ManeuverKind::CutOut,
        ),
        CaseKind::Following => (
            vec![car(1, ahead_of_ego(ego_x0, 50.0), RIGHT_LANE_Y, 25.0, None), car(2, ego_x0 - 50.0, LEFT_LANE_Y, 30.0, None)],
            ManeuverKind::Following,
        ),
    };
    let t_cross = actors[0].lane_change.map(|lc| lc.t_cross);
    spec(
        &format!("fixture_{}", event.as_str()),
        duration,
        ego(ego_x0, 25.0, 25.0),
        &actors,
        vec![DeclaredEvent {
            kind: event,
            actor_id: 1,
            t_start: t_cross.map_or(0.0, |t| t - LANE_CHANGE_S / 2.0),
            t_cross,
            t_end: t_cross.map_or(duration, |t| t + LANE_CHANGE_S / 2.0),
        }],
        Assertions::default(),
    )
}

/// Shipped CSVs of the synthetic fixtures, by file name.
pub const HIGHD_FIXTURES: [(&str, CaseKind, &str); 3] = [
    ("cut_in_tracks.csv", CaseKind::CutIn, include_str!("../../data/highd/cut_in_tracks.csv")),
    ("cut_out_tracks.csv", CaseKind::CutOut, include_str!("../../data/highd/cut_out_tracks.csv")),
    ("following_tracks.csv", CaseKind::Following, include_str!("../../data/highd/following_tracks.csv")),
];

/// The synthetic highD table for one maneuver: 3 vehicles, 1500 frames.
pub fn synthetic_fixture(kind: CaseKind) -> TrackTable {
    tracks_from_spec(&fixture_spec(kind), FIXTURE_FRAME_RATE, FIXTURE_FRAMES)
}
