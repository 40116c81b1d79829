//! highD-format track tables and rule-based maneuver detection.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;

pub const DEFAULT_FRAME_RATE: f64 = 25.0;

pub const COLUMNS: [&str; 9] = ["frame", "id", "x", "y", "xVelocity", "yVelocity", "width", "height", "laneId"];

/// One row. `x`, `y` are the bounding-box corner with the smallest
/// coordinates; `width` is the extent along x and `height` along y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRow {
    pub frame: i64,
    pub id: i64,
    pub x: f64,
    pub y: f64,
    pub x_velocity: f64,
    pub y_velocity: f64,
    pub width: f64,
    pub height: f64,
    pub lane_id: i64,
}

impl TrackRow {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn speed(&self) -> f64 {
        self.x_velocity.hypot(self.y_velocity)
    }
}

/// Rows grouped by vehicle id, each track sorted by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTable {
    pub frame_rate: f64,
    pub tracks: BTreeMap<i64, Vec<TrackRow>>,
}

impl TrackTable {
    pub fn from_rows(rows: Vec<TrackRow>, frame_rate: f64) -> Result<Self, ScenarioError> {
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(ScenarioError::Invalid(format!("frame rate {frame_rate} must be positive")));
        }
        let mut tracks: BTreeMap<i64, Vec<TrackRow>> = BTreeMap::new();
        for r in rows {
            tracks.entry(r.id).or_default().push(r);
        }
        for (id, t) in &mut tracks {
            t.sort_by_key(|r| r.frame);
            for w in t.windows(2) {
                if w[1].frame == w[0].frame {
                    return Err(ScenarioError::DuplicateRow { id: *id, frame: w[0].frame });
                }
                if w[1].frame != w[0].frame + 1 {
                    return Err(ScenarioError::NonContiguousTrack { id: *id, after_frame: w[0].frame });
                }
            }
        }
        Ok(Self { frame_rate, tracks })
    }

    pub fn row_count(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    pub fn ids(&self) -> Vec<i64> {
        self.tracks.keys().copied().collect()
    }

    pub fn row(&self, id: i64, frame: i64) -> Option<&TrackRow> {
        let t = self.tracks.get(&id)?;
        let first = t.first()?.frame;
        usize::try_from(frame - first).ok().and_then(|i| t.get(i))
    }

    pub fn frame_range(&self, id: i64) -> Option<(i64, i64)> {
        let t = self.tracks.get(&id)?;
        Some((t.first()?.frame, t.last()?.frame))
    }

    /// Rows in (frame, id) order.
    pub fn rows(&self) -> Vec<TrackRow> {
        let mut v: Vec<TrackRow> = self.tracks.values().flatten().copied().collect();
        v.sort_by_key(|r| (r.frame, r.id));
        v
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ScenarioError> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| ScenarioError::Io(e.to_string());
        out.write_record(COLUMNS).map_err(io)?;
        for r in self.rows() {
            out.write_record([
                r.frame.to_string(),
                r.id.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.x_velocity.to_string(),
                r.y_velocity.to_string(),
                r.width.to_string(),
                r.height.to_string(),
                r.lane_id.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| ScenarioError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory does not fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

pub fn read_highd_csv<R: Read>(reader: R, frame_rate: f64) -> Result<TrackTable, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ScenarioError::Csv { line: 1, message: e.to_string() })?.clone();
    let mut idx = [0usize; 9];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| ScenarioError::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ScenarioError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<&str, ScenarioError> {
            rec.get(idx[i]).ok_or_else(|| ScenarioError::Csv { line, message: format!("missing `{}`", COLUMNS[i]) })
        };
        let int = |i: usize| -> Result<i64, ScenarioError> {
            let s = field(i)?;
            s.parse::<i64>().or_else(|_| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && v.is_finite())
                    .map(|v| v as i64)
                    .ok_or(())
            })
            .map_err(|_| ScenarioError::Csv { line, message: format!("`{}`=`{s}` is not an integer", COLUMNS[i]) })
        };
        let real = |i: usize| -> Result<f64, ScenarioError> {
            let s = field(i)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ScenarioError::Csv { line, message: format!("`{}`=`{s}` is not a number", COLUMNS[i]) })
        };
        rows.push(TrackRow {
            frame: int(0)?,
            id: int(1)?,
            x: real(2)?,
            y: real(3)?,
            x_velocity: real(4)?,
            y_velocity: real(5)?,
            width: real(6)?,
            height: real(7)?,
            lane_id: int(8)?,
        });
    }
    TrackTable::from_rows(rows, frame_rate)
}

pub fn load_highd_csv(path: &Path, frame_rate: f64) -> Result<TrackTable, ScenarioError> {
    let f = std::fs::File::open(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    read_highd_csv(f, frame_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverKind {
    CutIn,
    CutOut,
    Following,
}

impl ManeuverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ManeuverKind::CutIn => "cut_in",
            ManeuverKind::CutOut => "cut_out",
            ManeuverKind::Following => "following",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManeuverEvent {
    pub kind: ManeuverKind,
    pub actor_id: i64,
    pub ego_id: i64,
    pub frame_start: i64,
    /// First frame in the new lane; `None` for following.
    pub frame_cross: Option<i64>,
    pub frame_end: i64,
}

/// Detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Largest bumper gap at the crossing for cut-in/cut-out, m.
    pub lane_change_gap_max: f64,
    /// Largest bumper gap while following, m.
    pub following_gap_max: f64,
    pub following_min_duration_s: f64,
    /// Half-width of the window around a crossing, s.
    pub window_s: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { lane_change_gap_max: 100.0, following_gap_max: 150.0, following_min_duration_s: 10.0, window_s: 5.0 }
    }
}

/// Bumper gap from the ego front to the actor rear along the ego's direction
/// of travel; negative when the actor is not ahead.
pub fn bumper_gap(ego: &TrackRow, actor: &TrackRow, direction: f64) -> f64 {
    if direction >= 0.0 {
        actor.x - (ego.x + ego.width)
    } else {
        ego.x - (actor.x + actor.width)
    }
}

fn travel_direction(track: &[TrackRow]) -> f64 {
    let vx: f64 = track.iter().map(|r| r.x_velocity).sum();
    if vx < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub fn detect_maneuvers(table: &TrackTable, ego_id: i64, cfg: &DetectionConfig) -> Result<Vec<ManeuverEvent>, ScenarioError> {
    let ego = table.tracks.get(&ego_id).ok_or(ScenarioError::UnknownEgo(ego_id))?;
    let (ego_first, ego_last) = table.frame_range(ego_id).ok_or(ScenarioError::UnknownEgo(ego_id))?;
    let dir = travel_direction(ego);
    let half_window = (cfg.window_s * table.frame_rate).round() as i64;
    let min_follow_frames = (cfg.following_min_duration_s * table.frame_rate).round() as i64;
    let mut events = Vec::new();

    for (&id, track) in &table.tracks {
        if id == ego_id {
            continue;
        }
        let first = track[0].frame.max(ego_first);
        let last = track[track.len() - 1].frame.min(ego_last);
        if first > last {
            continue;
        }
        let window = |f: i64| ((f - half_window).max(first), (f + half_window).min(last));
        let mut lane_changed = false;
        for f in first + 1..=last {
            let (prev, cur) = (table.row(id, f - 1).unwrap(), table.row(id, f).unwrap());
            if prev.lane_id == cur.lane_id {
                continue;
            }
            lane_changed = true;
            let e = table.row(ego_id, f).unwrap();
            let gap = bumper_gap(e, cur, dir);
            if !(gap > 0.0 && gap <= cfg.lane_change_gap_max) {
                continue;
            }
            let kind = if cur.lane_id == e.lane_id && (prev.lane_id - e.lane_id).abs() == 1 {
                ManeuverKind::CutIn
            } else if prev.lane_id == e.lane_id && (cur.lane_id - e.lane_id).abs() == 1 {
                ManeuverKind::CutOut
            } else {
                continue;
            };
            let (s, t) = window(f);
            events.push(ManeuverEvent { kind, actor_id: id, ego_id, frame_start: s, frame_cross: Some(f), frame_end: t });
        }
        if lane_changed {
            continue;
        }
        let mut run: Option<i64> = None;
        for f in first..=last + 1 {
            let ok = f <= last && {
                let (a, e) = (table.row(id, f).unwrap(), table.row(ego_id, f).unwrap());
                let gap = bumper_gap(e, a, dir);
                a.lane_id == e.lane_id && gap > 0.0 && gap <= cfg.following_gap_max
            };
            match (ok, run) {
                (true, None) => run = Some(f),
                (false, Some(s)) => {
                    if f - s >= min_follow_frames {
                        events.push(ManeuverEvent {
                            kind: ManeuverKind::Following,
                            actor_id: id,
                            ego_id,
                            frame_start: s,
                            frame_cross: None,
                            frame_end: f - 1,
                        });
                    }
                    run = None;
                }
                _ => {}
            }
        }
    }
    events.sort_by_key(|e| (e.frame_cross.unwrap_or(e.frame_start), e.actor_id, e.kind));
    Ok(events)
}
