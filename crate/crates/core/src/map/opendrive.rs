//! OpenDRIVE subset: roads, line/arc plan view, lane sections with constant
//! widths, and road/lane links.

use roxmltree::{Document, Node};

use super::MapError;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryKind {
    Line,
    /// Constant curvature, 1/m, positive turning left.
    Arc { curvature: f64 },
    /// spiral, poly3, paramPoly3: kept so prune can report it.
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub hdg: f64,
    pub length: f64,
    pub kind: GeometryKind,
}

impl Geometry {
    /// Position and heading at distance `ds` into the segment.
    pub fn eval(&self, ds: f64) -> (f64, f64, f64) {
        match self.kind {
            GeometryKind::Arc { curvature: k } if k != 0.0 => {
                let h = self.hdg + k * ds;
                (
                    self.x + (h.sin() - self.hdg.sin()) / k,
                    self.y - (h.cos() - self.hdg.cos()) / k,
                    h,
                )
            }
            _ => (self.x + ds * self.hdg.cos(), self.y + ds * self.hdg.sin(), self.hdg),
        }
    }

    pub fn curvature(&self) -> f64 {
        match self.kind {
            GeometryKind::Arc { curvature } => curvature,
            _ => 0.0,
        }
    }
}

/// `<width>` record; only `a` is honoured.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthRecord {
    pub s_offset: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: i32,
    pub lane_type: String,
    pub widths: Vec<WidthRecord>,
    pub predecessor: Option<i32>,
    pub successor: Option<i32>,
    /// m/s
    pub speed_limit: Option<f64>,
}

impl Lane {
    pub fn width(&self) -> f64 {
        self.widths.first().map_or(0.0, |w| w.a)
    }

    pub fn has_variable_width(&self) -> bool {
        self.widths.len() > 1 || self.widths.iter().any(|w| w.b != 0.0 || w.c != 0.0 || w.d != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneSection {
    pub s: f64,
    /// Left (positive id) and right (negative id) lanes; the center lane is
    /// not stored.
    pub lanes: Vec<Lane>,
}

impl LaneSection {
    pub fn lane(&self, id: i32) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPoint {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadLink {
    pub element_type: String,
    pub element_id: String,
    pub contact_point: ContactPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: String,
    pub length: f64,
    pub predecessor: Option<RoadLink>,
    pub successor: Option<RoadLink>,
    pub plan_view: Vec<Geometry>,
    pub lane_sections: Vec<LaneSection>,
    /// m/s, from `<type><speed>`
    pub speed_limit: Option<f64>,
}

impl Road {
    pub fn has_unsupported_geometry(&self) -> bool {
        self.plan_view.iter().any(|g| matches!(g.kind, GeometryKind::Unsupported(_)))
    }

    pub fn section_end(&self, index: usize) -> f64 {
        self.lane_sections.get(index + 1).map_or(self.length, |s| s.s)
    }

    /// Reference line position and heading at `s`.
    pub fn reference_at(&self, s: f64) -> (f64, f64, f64) {
        let g = self
            .plan_view
            .iter()
            .rev()
            .find(|g| g.s <= s)
            .or_else(|| self.plan_view.first())
            .expect("roads have at least one geometry");
        g.eval((s - g.s).clamp(0.0, g.length))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OpenDriveDoc {
    pub roads: Vec<Road>,
    /// Elements outside the supported subset that were skipped.
    pub warnings: Vec<String>,
}

impl OpenDriveDoc {
    pub fn road(&self, id: &str) -> Option<&Road> {
        self.roads.iter().find(|r| r.id == id)
    }

    pub fn lane_count(&self) -> usize {
        self.roads.iter().flat_map(|r| &r.lane_sections).map(|s| s.lanes.len()).sum()
    }
}

const ROAD_CHILDREN: &[&str] = &["link", "planView", "lanes", "type"];

pub fn parse_opendrive(xml: &str) -> Result<OpenDriveDoc, MapError> {
    let doc = Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        MapError::Xml { line: pos.row as usize, column: pos.col as usize, message: e.to_string() }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "OpenDRIVE" {
        return Err(MapError::Xml {
            line: 1,
            column: 1,
            message: format!("root element is <{}>, expected <OpenDRIVE>", root.tag_name().name()),
        });
    }
    let mut out = OpenDriveDoc::default();
    for child in root.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "road" => out.roads.push(parse_road(&doc, child, &mut out.warnings)?),
            "header" => {}
            other => out.warnings.push(format!("{}: skipped <{other}>", position(&doc, child))),
        }
    }
    Ok(out)
}

fn position(doc: &Document, node: Node) -> String {
    let p = doc.text_pos_at(node.range().start);
    format!("line {}", p.row)
}

fn attr<'a>(doc: &Document, node: Node<'a, '_>, name: &str) -> Result<&'a str, MapError> {
    node.attribute(name).ok_or_else(|| MapError::Invalid(format!(
        "{}: <{}> lacks attribute `{name}`",
        position(doc, node),
        node.tag_name().name()
    )))
}

fn num(doc: &Document, node: Node, name: &str) -> Result<f64, MapError> {
    let raw = attr(doc, node, name)?;
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
        MapError::Invalid(format!("{}: attribute `{name}`=`{raw}` is not a number", position(doc, node)))
    })
}

fn num_or(doc: &Document, node: Node, name: &str, default: f64) -> Result<f64, MapError> {
    if node.attribute(name).is_some() {
        num(doc, node, name)
    } else {
        Ok(default)
    }
}

fn speed_to_mps(value: f64, unit: Option<&str>) -> f64 {
    match unit {
        Some("km/h") => value / 3.6,
        Some("mph") => value * 0.44704,
        _ => value,
    }
}

fn parse_road(doc: &Document, node: Node, warnings: &mut Vec<String>) -> Result<Road, MapError> {
    let id = attr(doc, node, "id")?.to_string();
    let length = num(doc, node, "length")?;
    let mut road = Road {
        id: id.clone(),
        length,
        predecessor: None,
        successor: None,
        plan_view: Vec::new(),
        lane_sections: Vec::new(),
        speed_limit: None,
    };
    for child in node.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "link" => {
                for l in child.children().filter(Node::is_element) {
                    let link = RoadLink {
                        element_type: l.attribute("elementType").unwrap_or("road").to_string(),
                        element_id: attr(doc, l, "elementId")?.to_string(),
                        contact_point: match l.attribute("contactPoint") {
                            Some("end") => ContactPoint::End,
                            Some("start") => ContactPoint::Start,
                            // a predecessor is usually joined at its end, a successor at its start
                            _ if l.tag_name().name() == "predecessor" => ContactPoint::End,
                            _ => ContactPoint::Start,
                        },
                    };
                    match l.tag_name().name() {
                        "predecessor" => road.predecessor = Some(link),
                        "successor" => road.successor = Some(link),
                        other => warnings.push(format!("road {id}: skipped link <{other}>")),
                    }
                }
            }
            "planView" => {
                for g in child.children().filter(|n| n.has_tag_name("geometry")) {
                    road.plan_view.push(parse_geometry(doc, g)?);
                }
            }
            "type" => {
                if let Some(sp) = child.children().find(|n| n.has_tag_name("speed")) {
                    road.speed_limit = Some(speed_to_mps(num(doc, sp, "max")?, sp.attribute("unit")));
                }
            }
            "lanes" => {
                for sec in child.children().filter(Node::is_element) {
                    match sec.tag_name().name() {
                        "laneSection" => road.lane_sections.push(parse_section(doc, sec, &id, warnings)?),
                        other => warnings.push(format!("road {id}: skipped <{other}>")),
                    }
                }
            }
            other if !ROAD_CHILDREN.contains(&other) => {
                warnings.push(format!("road {id}: skipped <{other}>"));
            }
            _ => {}
        }
    }
    if road.plan_view.is_empty() {
        return Err(MapError::Invalid(format!("road {id} has no plan-view geometry")));
    }
    road.lane_sections.sort_by(|a, b| a.s.total_cmp(&b.s));

    let unsupported: Vec<&str> = road
        .plan_view
        .iter()
        .filter_map(|g| match &g.kind {
            GeometryKind::Unsupported(k) => Some(k.as_str()),
            _ => None,
        })
        .collect();
    if !unsupported.is_empty() {
        let has_driving = road.lane_sections.iter().flat_map(|s| &s.lanes).any(|l| l.lane_type == "driving");
        if has_driving {
            return Err(MapError::UnsupportedGeometry { road: id, kinds: unsupported.iter().map(|s| s.to_string()).collect() });
        }
        warnings.push(format!("road {id}: unsupported geometry {} (no driving lanes)", unsupported.join(", ")));
    }
    Ok(road)
}

fn parse_geometry(doc: &Document, g: Node) -> Result<Geometry, MapError> {
    let shape = g.children().find(Node::is_element).ok_or_else(|| {
        MapError::Invalid(format!("{}: <geometry> without a shape", position(doc, g)))
    })?;
    let kind = match shape.tag_name().name() {
        "line" => GeometryKind::Line,
        "arc" => GeometryKind::Arc { curvature: num(doc, shape, "curvature")? },
        other => GeometryKind::Unsupported(other.to_string()),
    };
    let length = num(doc, g, "length")?;
    if length <= 0.0 {
        return Err(MapError::Invalid(format!("{}: geometry length must be positive", position(doc, g))));
    }
    Ok(Geometry { s: num(doc, g, "s")?, x: num(doc, g, "x")?, y: num(doc, g, "y")?, hdg: num(doc, g, "hdg")?, length, kind })
}

fn parse_section(doc: &Document, sec: Node, road: &str, warnings: &mut Vec<String>) -> Result<LaneSection, MapError> {
    let mut lanes = Vec::new();
    for side in sec.children().filter(Node::is_element) {
        match side.tag_name().name() {
            "left" | "right" => {
                for l in side.children().filter(|n| n.has_tag_name("lane")) {
                    lanes.push(parse_lane(doc, l, road)?);
                }
            }
            "center" => {}
            other => warnings.push(format!("road {road}: skipped <{other}> in laneSection")),
        }
    }
    lanes.sort_by_key(|l| l.id);
    Ok(LaneSection { s: num(doc, sec, "s")?, lanes })
}

fn parse_lane(doc: &Document, l: Node, road: &str) -> Result<Lane, MapError> {
    let id: i32 = attr(doc, l, "id")?
        .trim()
        .parse()
        .map_err(|_| MapError::Invalid(format!("{}: lane id is not an integer", position(doc, l))))?;
    if id == 0 {
        return Err(MapError::Invalid(format!("road {road}: lane id 0 outside <center>")));
    }
    let mut lane = Lane {
        id,
        lane_type: l.attribute("type").unwrap_or("none").to_string(),
        widths: Vec::new(),
        predecessor: None,
        successor: None,
        speed_limit: None,
    };
    for c in l.children().filter(Node::is_element) {
        match c.tag_name().name() {
            "width" => lane.widths.push(WidthRecord {
                s_offset: num_or(doc, c, "sOffset", 0.0)?,
                a: num(doc, c, "a")?,
                b: num_or(doc, c, "b", 0.0)?,
                c: num_or(doc, c, "c", 0.0)?,
                d: num_or(doc, c, "d", 0.0)?,
            }),
            "link" => {
                for k in c.children().filter(Node::is_element) {
                    let target: i32 = attr(doc, k, "id")?
                        .trim()
                        .parse()
                        .map_err(|_| MapError::Invalid(format!("{}: lane link id is not an integer", position(doc, k))))?;
                    match k.tag_name().name() {
                        "predecessor" => lane.predecessor = Some(target),
                        "successor" => lane.successor = Some(target),
                        _ => {}
                    }
                }
            }
            "speed" => lane.speed_limit = Some(speed_to_mps(num(doc, c, "max")?, c.attribute("unit"))),
            _ => {}
        }
    }
    if lane.width() <= 0.0 {
        return Err(MapError::Invalid(format!("road {road}: lane {id} width must be positive")));
    }
    Ok(lane)
}
