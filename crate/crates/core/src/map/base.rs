//! Base map: sampled lane geometry and lane relations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::opendrive::{OpenDriveDoc, Road};
use super::prune::link_target;
use super::{MapError, Point, MAP_SCHEMA_VERSION};

/// 130 km/h, used when neither lane nor road states a limit.
pub const DEFAULT_SPEED_LIMIT: f64 = 130.0 / 3.6;

pub const GEOMETRY_GAP_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Driving,
    Shoulder,
    None,
}

impl LaneType {
    fn from_doc(s: &str) -> Self {
        match s {
            "driving" => LaneType::Driving,
            "shoulder" => LaneType::Shoulder,
            _ => LaneType::None,
        }
    }
}

/// One lane. Polylines run in the direction of travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLane {
    pub lane_uid: String,
    pub road_id: String,
    pub section: usize,
    pub lane_id: i32,
    pub lane_type: LaneType,
    pub width: f64,
    pub length: f64,
    pub speed_limit: f64,
    pub centerline: Vec<Point>,
    pub left_boundary: Vec<Point>,
    pub right_boundary: Vec<Point>,
    pub predecessors: Vec<String>,
    pub successors: Vec<String>,
    pub left_neighbor: Option<String>,
    pub right_neighbor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMap {
    pub schema_version: u32,
    /// Maximum spacing between centerline samples, m.
    pub sample_spacing: f64,
    pub lanes: Vec<BaseLane>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl BaseMap {
    pub fn new(sample_spacing: f64, lanes: Vec<BaseLane>) -> Self {
        let index = lanes.iter().enumerate().map(|(i, l)| (l.lane_uid.clone(), i)).collect();
        Self { schema_version: MAP_SCHEMA_VERSION, sample_spacing, lanes, index }
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let m: BaseMap = serde_json::from_str(text).map_err(|e| MapError::Invalid(format!("base map: {e}")))?;
        Ok(Self::new(m.sample_spacing, m.lanes))
    }

    pub fn index_of(&self, uid: &str) -> Option<usize> {
        self.index.get(uid).copied()
    }

    pub fn lane(&self, uid: &str) -> Option<&BaseLane> {
        self.index_of(uid).map(|i| &self.lanes[i])
    }
}

pub fn lane_uid(road: &str, section: usize, lane: i32) -> String {
    format!("{road}.{section}.{lane}")
}

pub fn polyline_length(pts: &[Point]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_plan_view(road: &Road) -> Result<(), MapError> {
    for w in road.plan_view.windows(2) {
        let (x, y, _) = w[0].eval(w[0].length);
        let gap = (x - w[1].x).hypot(y - w[1].y).max((w[0].s + w[0].length - w[1].s).abs());
        if gap > GEOMETRY_GAP_TOLERANCE {
            return Err(MapError::GeometryGap { road: road.id.clone(), s: w[1].s, gap });
        }
    }
    Ok(())
}

/// Lateral offsets (inner, outer) of a lane from the reference line. Positive
/// is left of the reference direction.
fn lane_offsets(road: &Road, section: usize, lane: i32) -> (f64, f64) {
    let sec = &road.lane_sections[section];
    let sign = lane.signum();
    let mut inner = 0.0;
    for k in 1..lane.abs() {
        inner += sec.lane(sign * k).map_or(0.0, |l| l.width());
    }
    let w = sec.lane(lane).map_or(0.0, |l| l.width());
    let sign = f64::from(sign);
    (sign * inner, sign * (inner + w))
}

fn sample_offset(road: &Road, s0: f64, s1: f64, offsets: &[f64], spacing: f64) -> Vec<Vec<Point>> {
    // Offset curves of an arc are stretched by |1 - k t|.
    let stretch = road
        .plan_view
        .iter()
        .filter(|g| g.s < s1 && g.s + g.length > s0)
        .flat_map(|g| offsets.iter().map(move |t| (1.0 - g.curvature() * t).abs()))
        .fold(1.0, f64::max);
    let n = (((s1 - s0) * stretch / spacing).ceil() as usize).max(1);
    let mut out = vec![Vec::with_capacity(n + 1); offsets.len()];
    for j in 0..=n {
        let s = s0 + (s1 - s0) * j as f64 / n as f64;
        let (x, y, h) = road.reference_at(s);
        let (sin, cos) = h.sin_cos();
        for (line, t) in out.iter_mut().zip(offsets) {
            line.push([x - t * sin, y + t * cos]);
        }
    }
    out
}

pub fn build_base_map(doc: &OpenDriveDoc, spacing: f64) -> Result<BaseMap, MapError> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(MapError::Invalid(format!("sample spacing {spacing} must be positive")));
    }
    let mut lanes = Vec::new();
    for road in doc.roads.iter().filter(|r| !r.has_unsupported_geometry()) {
        check_plan_view(road)?;
        for (si, sec) in road.lane_sections.iter().enumerate() {
            let (s0, s1) = (sec.s, road.section_end(si));
            if s1 - s0 <= 0.0 {
                return Err(MapError::Invalid(format!("road {}: empty lane section {si}", road.id)));
            }
            for lane in &sec.lanes {
                let (inner, outer) = lane_offsets(road, si, lane.id);
                let mut lines = sample_offset(road, s0, s1, &[(inner + outer) / 2.0, inner, outer], spacing);
                if lane.id > 0 {
                    for l in &mut lines {
                        l.reverse();
                    }
                }
                let right_boundary = lines.pop().unwrap();
                let left_boundary = lines.pop().unwrap();
                let centerline = lines.pop().unwrap();

                let travel_forward = lane.id < 0;
                let resolve = |target: Option<i32>, forward: bool| -> Vec<String> {
                    target
                        .and_then(|t| link_target(doc, road, si, t, forward))
                        .filter(|(r, s, l)| {
                            doc.road(r)
                                .filter(|r| !r.has_unsupported_geometry())
                                .and_then(|r| r.lane_sections.get(*s))
                                .and_then(|sec| sec.lane(*l))
                                .is_some()
                        })
                        .map(|(r, s, l)| vec![lane_uid(&r, s, l)])
                        .unwrap_or_default()
                };
                let (successors, predecessors) = if travel_forward {
                    (resolve(lane.successor, true), resolve(lane.predecessor, false))
                } else {
                    (resolve(lane.predecessor, false), resolve(lane.successor, true))
                };
                let neighbor = |id: i32| (id != 0 && id.signum() == lane.id.signum() && sec.lane(id).is_some()).then(|| lane_uid(&road.id, si, id));
                let (left, right) = if travel_forward { (lane.id + 1, lane.id - 1) } else { (lane.id - 1, lane.id + 1) };

                lanes.push(BaseLane {
                    lane_uid: lane_uid(&road.id, si, lane.id),
                    road_id: road.id.clone(),
                    section: si,
                    lane_id: lane.id,
                    lane_type: LaneType::from_doc(&lane.lane_type),
                    width: lane.width(),
                    length: polyline_length(&centerline),
                    speed_limit: lane.speed_limit.or(road.speed_limit).unwrap_or(DEFAULT_SPEED_LIMIT),
                    centerline,
                    left_boundary,
                    right_boundary,
                    predecessors,
                    successors,
                    left_neighbor: neighbor(left),
                    right_neighbor: neighbor(right),
                });
            }
        }
    }
    Ok(BaseMap::new(spacing, lanes))
}

/// Closest point of a polyline: (distance, arc length along it, signed
/// lateral offset with left positive).
pub fn project(pts: &[Point], p: Point) -> (f64, f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let seg = len2.sqrt();
        let u = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = [a[0] + u * dx, a[1] + u * dy];
        let d = dist(p, q);
        if d < best.0 {
            let cross = dx * (p[1] - a[1]) - dy * (p[0] - a[0]);
            let side = if seg > 0.0 { cross / seg } else { 0.0 };
            let lateral = if side >= 0.0 { d } else { -d };
            best = (d, acc + u * seg, lateral);
        }
        acc += seg;
    }
    best
}

/// Point and heading at arc length `s`, clamped to the polyline.
pub fn point_at(pts: &[Point], s: f64) -> (Point, f64) {
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = dist(w[0], w[1]);
        if acc + seg >= s && seg > 0.0 {
            let u = ((s - acc) / seg).clamp(0.0, 1.0);
            let h = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
            return ([w[0][0] + u * (w[1][0] - w[0][0]), w[0][1] + u * (w[1][1] - w[0][1])], h);
        }
        acc += seg;
    }
    let n = pts.len();
    let h = if n >= 2 { (pts[n - 1][1] - pts[n - 2][1]).atan2(pts[n - 1][0] - pts[n - 2][0]) } else { 0.0 };
    (pts[n - 1], h)
}
