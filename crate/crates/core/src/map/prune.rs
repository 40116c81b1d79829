//! Removes content the ADS map format cannot use.

use serde::{Deserialize, Serialize};

use super::opendrive::{ContactPoint, OpenDriveDoc, Road, WidthRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneEntry {
    pub element: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PruneReport {
    pub entries: Vec<PruneEntry>,
}

impl PruneReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, element: String, action: impl Into<String>) {
        self.entries.push(PruneEntry { element, action: action.into() });
    }
}

pub const KEPT_LANE_TYPES: [&str; 2] = ["driving", "shoulder"];

pub fn prune(doc: &OpenDriveDoc) -> (OpenDriveDoc, PruneReport) {
    let mut out = doc.clone();
    let mut report = PruneReport::default();

    for road in &mut out.roads {
        let unsupported = road.has_unsupported_geometry();
        for (si, sec) in road.lane_sections.iter_mut().enumerate() {
            for lane in &mut sec.lanes {
                let uid = format!("{}.{si}.{}", road.id, lane.id);
                if lane.lane_type != "none" && (unsupported || !KEPT_LANE_TYPES.contains(&lane.lane_type.as_str())) {
                    let why = if unsupported { "unsupported road geometry".to_string() } else { format!("type `{}`", lane.lane_type) };
                    report.push(format!("lane {uid}"), format!("type set to none ({why})"));
                    lane.lane_type = "none".into();
                }
                if lane.has_variable_width() {
                    let a = lane.width();
                    lane.widths = vec![WidthRecord { s_offset: 0.0, a, b: 0.0, c: 0.0, d: 0.0 }];
                    report.push(format!("lane {uid}"), format!("variable width reduced to constant {a} m"));
                }
            }
        }
    }

    let road_ids: Vec<String> = out.roads.iter().map(|r| r.id.clone()).collect();
    for road in &mut out.roads {
        for (which, link) in [("predecessor", &mut road.predecessor), ("successor", &mut road.successor)] {
            let Some(l) = link else { continue };
            let reason = if l.element_type != "road" {
                Some(format!("{} link unsupported", l.element_type))
            } else if !road_ids.contains(&l.element_id) {
                Some(format!("target road `{}` missing", l.element_id))
            } else {
                None
            };
            if let Some(reason) = reason {
                report.push(format!("road {} {which}", road.id), format!("link removed ({reason})"));
                *link = None;
            }
        }
    }

    // Lane links are checked against the already-cleaned road links.
    let snapshot = out.clone();
    for road in &mut out.roads {
        let nsec = road.lane_sections.len();
        for si in 0..nsec {
            for li in 0..road.lane_sections[si].lanes.len() {
                let lane = &road.lane_sections[si].lanes[li];
                let uid = format!("{}.{si}.{}", road.id, lane.id);
                let pred_ok = lane.predecessor.map(|t| link_target_exists(&snapshot, &road.id, si, t, false));
                let succ_ok = lane.successor.map(|t| link_target_exists(&snapshot, &road.id, si, t, true));
                let lane = &mut road.lane_sections[si].lanes[li];
                if pred_ok == Some(false) {
                    report.push(format!("lane {uid} predecessor"), format!("link to lane {} removed (target missing)", lane.predecessor.unwrap()));
                    lane.predecessor = None;
                }
                if succ_ok == Some(false) {
                    report.push(format!("lane {uid} successor"), format!("link to lane {} removed (target missing)", lane.successor.unwrap()));
                    lane.successor = None;
                }
            }
        }
    }
    (out, report)
}

/// The lane a link points at, as (road id, section index, lane id), following
/// the section order inside a road and the road link at its ends.
pub fn link_target(doc: &OpenDriveDoc, road: &Road, section: usize, lane: i32, forward: bool) -> Option<(String, usize, i32)> {
    if forward && section + 1 < road.lane_sections.len() {
        return Some((road.id.clone(), section + 1, lane));
    }
    if !forward && section > 0 {
        return Some((road.id.clone(), section - 1, lane));
    }
    let link = if forward { road.successor.as_ref() } else { road.predecessor.as_ref() }?;
    if link.element_type != "road" {
        return None;
    }
    let other = doc.road(&link.element_id)?;
    let idx = match link.contact_point {
        ContactPoint::Start => 0,
        ContactPoint::End => other.lane_sections.len().checked_sub(1)?,
    };
    Some((other.id.clone(), idx, lane))
}

fn link_target_exists(doc: &OpenDriveDoc, road_id: &str, section: usize, lane: i32, forward: bool) -> bool {
    let Some(road) = doc.road(road_id) else { return false };
    let Some((rid, si, lid)) = link_target(doc, road, section, lane, forward) else { return false };
    doc.road(&rid)
        .and_then(|r| r.lane_sections.get(si))
        .and_then(|s| s.lane(lid))
        .is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::opendrive::parse_opendrive;
    use crate::map::STRAIGHT_HIGHWAY_XODR;

    const SIDEWALK: &str = r#"<OpenDRIVE>
      <road id="1" length="50"><link><successor elementType="road" elementId="9" contactPoint="start"/></link>
        <planView><geometry s="0" x="0" y="0" hdg="0" length="50"><line/></geometry></planView>
        <lanes><laneSection s="0">
          <left><lane id="1" type="sidewalk"><width sOffset="0" a="2" b="0.1" c="0" d="0"/></lane></left>
          <right><lane id="-1" type="driving"><width sOffset="0" a="3.5"/><link><successor id="-1"/></link></lane></right>
        </laneSection></lanes></road>
    </OpenDRIVE>"#;

    #[test]
    fn sidewalk_dangling_link_and_variable_width() {
        let doc = parse_opendrive(SIDEWALK).unwrap();
        let (p, report) = prune(&doc);
        let lanes = &p.roads[0].lane_sections[0].lanes;
        assert_eq!(lanes[1].lane_type, "none");
        assert!(!lanes[1].has_variable_width());
        assert!(p.roads[0].successor.is_none());
        assert!(lanes[0].successor.is_none());
        let elements: Vec<&str> = report.entries.iter().map(|e| e.element.as_str()).collect();
        assert_eq!(elements, vec!["lane 1.0.1", "lane 1.0.1", "road 1 successor", "lane 1.0.-1 successor"]);
    }

    #[test]
    fn clean_doc_is_unchanged() {
        let doc = parse_opendrive(STRAIGHT_HIGHWAY_XODR).unwrap();
        let (p, report) = prune(&doc);
        assert!(report.is_empty(), "{report:?}");
        assert_eq!(p, doc);
    }

    #[test]
    fn idempotent() {
        let doc = parse_opendrive(SIDEWALK).unwrap();
        let (once, _) = prune(&doc);
        let (twice, report) = prune(&once);
        assert_eq!(once, twice);
        assert!(report.is_empty());
    }
}
