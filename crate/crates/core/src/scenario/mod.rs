//! Scenario schema, extraction from trajectory tables, and the shipped cases.

pub mod cases;
pub mod highd;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::base::BaseMap;
use crate::map::routing::snap;

pub use cases::{make_case, synthetic_fixture, tracks_from_spec, CaseKind};
pub use highd::{
    detect_maneuvers, load_highd_csv, read_highd_csv, DetectionConfig, ManeuverEvent, ManeuverKind, TrackRow,
    TrackTable, DEFAULT_FRAME_RATE,
};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("track {id} skips frames after frame {after_frame}")]
    NonContiguousTrack { id: i64, after_frame: i64 },
    #[error("track {id} has two rows for frame {frame}")]
    DuplicateRow { id: i64, frame: i64 },
    #[error("ego id {0} not in table")]
    UnknownEgo(i64),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoSpec {
    pub init_lane_uid: String,
    /// Arc length along the initial lane, m.
    pub init_s: f64,
    pub init_x: f64,
    pub init_y: f64,
    pub init_heading: f64,
    pub init_speed: f64,
    pub desired_speed: f64,
    pub goal_s: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficActor {
    pub actor_id: u32,
    pub length: f64,
    pub width: f64,
    pub trajectory: Vec<TrajectorySample>,
}

/// A maneuver in scenario time (t = 0 at scenario start).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclaredEvent {
    pub kind: ManeuverKind,
    pub actor_id: u32,
    pub t_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_cross: Option<f64>,
    pub t_end: f64,
}

/// Checks the analyzer applies to a run. Absent entries are not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Assertions {
    /// Lateral deviation bound for the ego, m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lateral_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_collision: Option<bool>,
    /// The ego must be decelerating within this many seconds after a cut-in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decel_within_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration_phase: Option<AccelerationPhase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_tracking: Option<SpeedTracking>,
    /// Required crossing times, checked to this tolerance, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossing_tolerance_s: Option<f64>,
}

/// After a cut-out the ego accelerates with `0 < a <= a_max` until within
/// `speed_tolerance` of the desired speed, with at least one gear-shift
/// jump in acceleration of `min_jump` or more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelerationPhase {
    pub start_within_s: f64,
    pub a_max: f64,
    pub speed_tolerance: f64,
    pub gear_shift_min_jump: f64,
}

/// During each interval of constant lead speed, after `settle_s`, the ego
/// speed stays within `tolerance` of the lead speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedTracking {
    pub lead_actor_id: u32,
    pub settle_s: f64,
    pub min_interval_s: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    pub map_ref: String,
    pub duration_s: f64,
    pub ego: EgoSpec,
    pub traffic: Vec<TrafficActor>,
    pub declared_events: Vec<DeclaredEvent>,
    #[serde(default)]
    pub assertions: Assertions,
    /// Lane boundary lines drawn in the lateral plot, m.
    #[serde(default)]
    pub lane_reference_y: Vec<f64>,
}

impl ScenarioSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if spec.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::Invalid(format!("unsupported schema_version {}", spec.schema_version)));
        }
        spec.check_shape()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json()).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn actor(&self, id: u32) -> Option<&TrafficActor> {
        self.traffic.iter().find(|a| a.actor_id == id)
    }

    /// Checks that need no map.
    pub fn check_shape(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s {} must be positive", self.duration_s));
        }
        let e = &self.ego;
        if !(e.init_speed >= 0.0 && e.desired_speed >= 0.0 && e.length > 0.0 && e.width > 0.0) {
            return bad("ego speeds must be non-negative and dimensions positive".into());
        }
        for a in &self.traffic {
            if a.trajectory.is_empty() {
                return bad(format!("actor {} has an empty trajectory", a.actor_id));
            }
            if !(a.length > 0.0 && a.width > 0.0) {
                return bad(format!("actor {} dimensions must be positive", a.actor_id));
            }
            if let Some(w) = a.trajectory.windows(2).find(|w| w[1].t <= w[0].t) {
                return bad(format!("actor {} timestamps not increasing at t={}", a.actor_id, w[1].t));
            }
        }
        let mut ids: Vec<u32> = self.traffic.iter().map(|a| a.actor_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate actor ids".into());
        }
        for ev in &self.declared_events {
            if self.actor(ev.actor_id).is_none() {
                return bad(format!("declared event refers to unknown actor {}", ev.actor_id));
            }
        }
        Ok(())
    }

    /// Full validation against a map: the ego lane exists and every position
    /// lies on a lane.
    pub fn validate(&self, base: &BaseMap) -> Result<(), ScenarioError> {
        self.check_shape()?;
        if base.lane(&self.ego.init_lane_uid).is_none() {
            return Err(ScenarioError::Invalid(format!("ego lane {} not in map", self.ego.init_lane_uid)));
        }
        let on_map = |x: f64, y: f64, what: &str| {
            snap(base, [x, y]).map(|_| ()).map_err(|e| ScenarioError::Invalid(format!("{what}: {e}")))
        };
        on_map(self.ego.init_x, self.ego.init_y, "ego start")?;
        on_map(self.ego.goal_x, self.ego.goal_y, "ego goal")?;
        for a in &self.traffic {
            for s in &a.trajectory {
                on_map(s.x, s.y, &format!("actor {} at t={}", a.actor_id, s.t))?;
            }
        }
        Ok(())
    }
}

/// Turns a detected maneuver into a scenario. Ego start and goal are the ego
/// rows at the first and last frame of the event window; actor rows are kept
/// at the table's frame rate with time measured from the window start.
pub fn export_scenario(table: &TrackTable, event: &ManeuverEvent, map_ref: &str, base: &BaseMap) -> Result<ScenarioSpec, ScenarioError> {
    let rate = table.frame_rate;
    let ego0 = table.row(event.ego_id, event.frame_start).ok_or(ScenarioError::UnknownEgo(event.ego_id))?;
    let ego1 = table.row(event.ego_id, event.frame_end).ok_or(ScenarioError::UnknownEgo(event.ego_id))?;
    let (x0, y0) = ego0.center();
    let (x1, y1) = ego1.center();
    let start = snap(base, [x0, y0]).map_err(|e| ScenarioError::Invalid(format!("ego start: {e}")))?;
    let goal = snap(base, [x1, y1]).map_err(|e| ScenarioError::Invalid(format!("ego goal: {e}")))?;
    let actor_id = u32::try_from(event.actor_id).map_err(|_| ScenarioError::Invalid(format!("actor id {} out of range", event.actor_id)))?;

    let time = |f: i64| (f - event.frame_start) as f64 / rate;
    let mut trajectory = Vec::new();
    let mut dims = (0.0, 0.0);
    for f in event.frame_start..=event.frame_end {
        if let Some(r) = table.row(event.actor_id, f) {
            let (x, y) = r.center();
            dims = (r.width, r.height);
            trajectory.push(TrajectorySample { t: time(f), x, y, speed: r.speed(), heading: r.y_velocity.atan2(r.x_velocity) });
        }
    }
    let spec = ScenarioSpec {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: format!("{}_actor{}_ego{}", event.kind.as_str(), event.actor_id, event.ego_id),
        map_ref: map_ref.to_string(),
        duration_s: time(event.frame_end),
        ego: EgoSpec {
            init_lane_uid: start.lane_uid,
            init_s: start.s,
            init_x: x0,
            init_y: y0,
            init_heading: ego0.y_velocity.atan2(ego0.x_velocity),
            init_speed: ego0.speed(),
            desired_speed: ego0.speed(),
            goal_s: goal.s,
            goal_x: x1,
            goal_y: y1,
            length: ego0.width,
            width: ego0.height,
        },
        traffic: vec![TrafficActor { actor_id, length: dims.0, width: dims.1, trajectory }],
        declared_events: vec![DeclaredEvent {
            kind: event.kind,
            actor_id,
            t_start: 0.0,
            t_cross: event.frame_cross.map(time),
            t_end: time(event.frame_end),
        }],
        assertions: Assertions::default(),
        lane_reference_y: Vec::new(),
    };
    Ok(spec)
}



#[cfg(test)]
mod detection_tests {
    use super::cases::{HIGHD_FIXTURES, FIXTURE_FRAME_RATE};
    use super::*;
    use crate::map::{convert, HIGHWAY_2520M_XODR};

    fn detect(table: &TrackTable) -> Vec<ManeuverEvent> {
        detect_maneuvers(table, 1, &DetectionConfig::default()).unwrap()
    }

    #[test]
    fn fixtures_yield_one_event_each() {
        for (name, kind, text) in HIGHD_FIXTURES {
            let table = read_highd_csv(text.as_bytes(), FIXTURE_FRAME_RATE).unwrap();
            let events = detect(&table);
            assert_eq!(events.len(), 1, "{name}: {events:?}");
            let e = &events[0];
            assert_eq!(e.actor_id, 2, "{name}");
            match kind {
                CaseKind::CutIn => {
                    assert_eq!(e.kind, ManeuverKind::CutIn);
                    assert_eq!(e.frame_cross, Some(700));
                    assert_eq!((e.frame_start, e.frame_end), (575, 825));
                }
                CaseKind::CutOut => {
                    assert_eq!(e.kind, ManeuverKind::CutOut);
                    assert_eq!(e.frame_cross, Some(750));
                }
                CaseKind::Following => {
                    assert_eq!(e.kind, ManeuverKind::Following);
                    assert_eq!(e.frame_cross, None);
                }
            }
        }
    }

    #[test]
    fn cases_round_trip_through_tracks() {
        for kind in CaseKind::ALL {
            let spec = make_case(kind);
            let frames = (spec.duration_s * 25.0) as i64;
            let events = detect(&tracks_from_spec(&spec, 25.0, frames));
            assert_eq!(events.len(), 1, "{kind:?}: {events:?}");
            let declared = &spec.declared_events[0];
            assert_eq!(events[0].kind, declared.kind);
            if let (Some(f), Some(t)) = (events[0].frame_cross, declared.t_cross) {
                assert!((f as f64 - t * 25.0).abs() <= 1.0, "{kind:?}: frame {f} vs {t}");
            }
        }
    }

    #[test]
    fn export_cut_in_fixture() {
        let m = convert(HIGHWAY_2520M_XODR, 1.0, 0.5).unwrap();
        let table = synthetic_fixture(CaseKind::CutIn);
        let event = &detect(&table)[0];
        let spec = export_scenario(&table, event, "highway_2520m.xodr", &m.base).unwrap();
        assert_eq!(spec.traffic.len(), 1);
        assert_eq!(spec.declared_events[0].kind, ManeuverKind::CutIn);
        assert_eq!(spec.declared_events[0].t_cross, Some(5.0));
        assert_eq!(spec.duration_s, 10.0);
        spec.validate(&m.base).unwrap();
        let back = ScenarioSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }
}
