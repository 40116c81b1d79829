//! OpenDRIVE to ADS map conversion: parse, prune, and build the base map,
//! routing graph and sim map.

pub mod base;
pub mod opendrive;
pub mod prune;
pub mod routing;
pub mod sim;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use base::{build_base_map, BaseLane, BaseMap, LaneType};
pub use opendrive::{parse_opendrive, OpenDriveDoc};
pub use prune::{prune, PruneReport};
pub use routing::{build_routing_graph, route, Route, RoutingGraph};
pub use sim::{build_sim_map, SimMap, DEFAULT_SIM_EPSILON};

pub type Point = [f64; 2];

pub const MAP_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SAMPLE_SPACING: f64 = 1.0;

pub const STRAIGHT_HIGHWAY_XODR: &str = include_str!("../../data/maps/straight_highway.xodr");
pub const HIGHWAY_2520M_XODR: &str = include_str!("../../data/maps/highway_2520m.xodr");
pub const TWO_ROAD_CHAIN_XODR: &str = include_str!("../../data/maps/two_road_chain.xodr");
pub const RING_ROAD_XODR: &str = include_str!("../../data/maps/ring_road.xodr");

/// Shipped maps by file name.
pub const FIXTURES: [(&str, &str); 4] = [
    ("straight_highway.xodr", STRAIGHT_HIGHWAY_XODR),
    ("highway_2520m.xodr", HIGHWAY_2520M_XODR),
    ("two_road_chain.xodr", TWO_ROAD_CHAIN_XODR),
    ("ring_road.xodr", RING_ROAD_XODR),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("XML error at line {line}, column {column}: {message}")]
    Xml { line: usize, column: usize, message: String },
    #[error("road {road}: unsupported geometry ({}) under a driving lane", kinds.join(", "))]
    UnsupportedGeometry { road: String, kinds: Vec<String> },
    #[error("road {road}: geometry gap of {gap:.4} m at s={s}")]
    GeometryGap { road: String, s: f64, gap: f64 },
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("no lane within 5 m of ({:.3}, {:.3}); nearest is {distance:.3} m away", point[0], point[1])]
    SnapFailure { point: Point, distance: f64 },
    #[error("no route from {from} to {to}")]
    NoRoute { from: String, to: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Every product of one conversion.
#[derive(Debug, Clone)]
pub struct MapProducts {
    pub doc: OpenDriveDoc,
    pub prune_report: PruneReport,
    pub base: BaseMap,
    pub routing: RoutingGraph,
    pub sim: SimMap,
}

pub fn convert(xodr: &str, spacing: f64, epsilon: f64) -> Result<MapProducts, MapError> {
    let parsed = parse_opendrive(xodr)?;
    let (doc, prune_report) = prune(&parsed);
    let base = build_base_map(&doc, spacing)?;
    let routing = build_routing_graph(&base);
    let sim = build_sim_map(&base, epsilon);
    Ok(MapProducts { doc, prune_report, base, routing, sim })
}

pub fn convert_file(path: &Path, spacing: f64, epsilon: f64) -> Result<MapProducts, MapError> {
    let text = std::fs::read_to_string(path).map_err(|e| MapError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    convert(&text, spacing, epsilon)
}

/// Loads a map by path, falling back to the shipped fixture of the same file
/// name when `path` does not exist.
pub fn load_map(path: &Path) -> Result<MapProducts, MapError> {
    if path.exists() {
        return convert_file(path, DEFAULT_SAMPLE_SPACING, DEFAULT_SIM_EPSILON);
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    match FIXTURES.iter().find(|(n, _)| *n == name) {
        Some((_, text)) if path.parent().is_none_or(|p| p.as_os_str().is_empty()) => {
            convert(text, DEFAULT_SAMPLE_SPACING, DEFAULT_SIM_EPSILON)
        }
        _ => Err(MapError::Io { path: path.to_path_buf(), message: "no such file".into() }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Base,
    Routing,
    Sim,
    All,
}

impl Emit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(Emit::Base),
            "routing" => Some(Emit::Routing),
            "sim" => Some(Emit::Sim),
            "all" => Some(Emit::All),
            _ => None,
        }
    }
}

/// Writes the selected products into `dir` and returns the written paths.
pub fn write_products(products: &MapProducts, dir: &Path, emit: Emit) -> Result<Vec<PathBuf>, MapError> {
    std::fs::create_dir_all(dir).map_err(|e| MapError::Io { path: dir.to_path_buf(), message: e.to_string() })?;
    let mut files: Vec<(&str, String)> = Vec::new();
    let json = |v: serde_json::Value| serde_json::to_string_pretty(&v).expect("map products serialize");
    if matches!(emit, Emit::Base | Emit::All) {
        let mut v = serde_json::to_value(&products.base).expect("base map serializes");
        v["prune_report"] = serde_json::to_value(&products.prune_report).expect("report serializes");
        files.push(("base_map.json", json(v)));
    }
    if matches!(emit, Emit::Routing | Emit::All) {
        let mut v = serde_json::to_value(&products.routing).expect("graph serializes");
        v["connectivity"] = serde_json::to_value(products.routing.connectivity()).expect("report serializes");
        files.push(("routing_map.json", json(v)));
    }
    if matches!(emit, Emit::Sim | Emit::All) {
        files.push(("sim_map.json", json(serde_json::to_value(&products.sim).expect("sim map serializes"))));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body + "\n").map_err(|e| MapError::Io { path: p.clone(), message: e.to_string() })?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_convert() {
        for (name, text) in FIXTURES {
            let p = convert(text, 1.0, 0.5).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(p.prune_report.is_empty(), "{name}: {:?}", p.prune_report);
            assert!(p.doc.warnings.is_empty(), "{name}: {:?}", p.doc.warnings);
        }
    }

    #[test]
    fn straight_highway_summary() {
        let p = convert(STRAIGHT_HIGHWAY_XODR, 1.0, 0.5).unwrap();
        assert_eq!(p.doc.roads.len(), 1);
        assert_eq!(p.doc.roads[0].length, 420.0);
        assert_eq!(p.doc.lane_count(), 3);
        assert_eq!(p.routing.nodes.len(), 2);
        assert!(p.sim.lanes.iter().all(|l| l.centerline.len() == 2));
    }

    #[test]
    fn write_and_reload_base() {
        let dir = tempfile::tempdir().unwrap();
        let p = convert(TWO_ROAD_CHAIN_XODR, 1.0, 0.5).unwrap();
        let files = write_products(&p, dir.path(), Emit::All).unwrap();
        assert_eq!(files.len(), 3);
        let text = std::fs::read_to_string(dir.path().join("base_map.json")).unwrap();
        let base = BaseMap::from_json(&text).unwrap();
        assert_eq!(base, p.base);
        assert!(base.lane("2.0.-1").is_some());
    }

    #[test]
    fn load_map_errors_name_the_path() {
        let err = load_map(Path::new("/nonexistent/dir/highway.xodr")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/highway.xodr"));
        assert!(load_map(Path::new("straight_highway.xodr")).is_ok());
    }
}
