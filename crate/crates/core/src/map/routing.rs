//! Lane-topology graph and route search.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use super::base::{project, BaseMap, LaneType};
use super::{MapError, Point, MAP_SCHEMA_VERSION};

pub const LANE_CHANGE_PENALTY: f64 = 10.0;
pub const SNAP_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Successor,
    LaneChangeLeft,
    LaneChangeRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingNode {
    pub lane_uid: String,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub cost: f64,
}

/// Driving lanes only. Nodes are sorted by lane uid, so comparing index
/// sequences compares uid sequences lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingGraph {
    pub schema_version: u32,
    pub lane_change_penalty: f64,
    pub nodes: Vec<RoutingNode>,
    pub edges: Vec<RoutingEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    /// Strongly connected components, each sorted, largest first.
    pub components: Vec<Vec<String>>,
    /// Lanes no other lane leads to.
    pub unreachable: Vec<String>,
}

impl RoutingGraph {
    pub fn node_index(&self, uid: &str) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.lane_uid.as_str().cmp(uid)).ok()
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &RoutingEdge> {
        self.edges.iter().filter(move |e| e.from == node)
    }

    pub fn connectivity(&self) -> ConnectivityReport {
        let mut g = DiGraph::<(), ()>::new();
        let idx: Vec<_> = self.nodes.iter().map(|_| g.add_node(())).collect();
        for e in &self.edges {
            g.add_edge(idx[e.from], idx[e.to], ());
        }
        let mut components: Vec<Vec<String>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut v: Vec<String> = c.iter().map(|n| self.nodes[n.index()].lane_uid.clone()).collect();
                v.sort();
                v
            })
            .collect();
        components.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        let has_in: HashSet<usize> = self.edges.iter().filter(|e| e.from != e.to).map(|e| e.to).collect();
        let unreachable = (0..self.nodes.len()).filter(|i| !has_in.contains(i)).map(|i| self.nodes[i].lane_uid.clone()).collect();
        ConnectivityReport { components, unreachable }
    }
}

pub fn build_routing_graph(base: &BaseMap) -> RoutingGraph {
    let mut driving: Vec<&str> = base
        .lanes
        .iter()
        .filter(|l| l.lane_type == LaneType::Driving)
        .map(|l| l.lane_uid.as_str())
        .collect();
    driving.sort_unstable();
    let nodes: Vec<RoutingNode> = driving
        .iter()
        .map(|uid| RoutingNode { lane_uid: uid.to_string(), length: base.lane(uid).unwrap().length })
        .collect();
    let find = |uid: &str| driving.binary_search(&uid).ok();
    let mut edges = Vec::new();
    for (i, uid) in driving.iter().enumerate() {
        let lane = base.lane(uid).unwrap();
        for s in &lane.successors {
            if let Some(j) = find(s) {
                edges.push(RoutingEdge { from: i, to: j, kind: EdgeKind::Successor, cost: lane.length });
            }
        }
        for (n, kind) in [(&lane.left_neighbor, EdgeKind::LaneChangeLeft), (&lane.right_neighbor, EdgeKind::LaneChangeRight)] {
            if let Some(j) = n.as_deref().and_then(find) {
                edges.push(RoutingEdge { from: i, to: j, kind, cost: LANE_CHANGE_PENALTY });
            }
        }
    }
    RoutingGraph { schema_version: MAP_SCHEMA_VERSION, lane_change_penalty: LANE_CHANGE_PENALTY, nodes, edges }
}

/// A point matched to a lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Snap {
    pub lane_uid: String,
    pub distance: f64,
    /// Arc length along the centerline, m.
    pub s: f64,
    /// `s` over lane length.
    pub fraction: f64,
}

/// Nearest driving or shoulder lane within [`SNAP_RADIUS`]; ties go to the
/// smaller uid.
pub fn snap(base: &BaseMap, p: Point) -> Result<Snap, MapError> {
    let mut best: Option<Snap> = None;
    for l in base.lanes.iter().filter(|l| l.lane_type != LaneType::None) {
        let (d, s, _) = project(&l.centerline, p);
        let better = match &best {
            None => true,
            Some(b) => d < b.distance || (d == b.distance && l.lane_uid < b.lane_uid),
        };
        if better {
            let fraction = if l.length > 0.0 { (s / l.length).clamp(0.0, 1.0) } else { 0.0 };
            best = Some(Snap { lane_uid: l.lane_uid.clone(), distance: d, s, fraction });
        }
    }
    match best {
        Some(b) if b.distance <= SNAP_RADIUS => Ok(b),
        Some(b) => Err(MapError::SnapFailure { point: p, distance: b.distance }),
        None => Err(MapError::SnapFailure { point: p, distance: f64::INFINITY }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lanes: Vec<String>,
    /// Distance driven plus lane-change penalties, m.
    pub cost: f64,
    /// Distance driven along centerlines, m.
    pub length: f64,
    pub lane_changes: usize,
}

/// Cost of driving `path` from `start_fraction` on its first lane to
/// `goal_fraction` on its last, or `None` if the path is not drivable. Lane
/// changes keep the fraction travelled.
pub fn path_cost(graph: &RoutingGraph, path: &[usize], start_fraction: f64, goal_fraction: f64) -> Option<(f64, f64, usize)> {
    let mut f = start_fraction;
    let (mut cost, mut length, mut changes) = (0.0, 0.0, 0);
    for w in path.windows(2) {
        let e = graph.out_edges(w[0]).find(|e| e.to == w[1])?;
        match e.kind {
            EdgeKind::Successor => {
                let d = (1.0 - f) * graph.nodes[w[0]].length;
                cost += d;
                length += d;
                f = 0.0;
            }
            _ => {
                cost += e.cost;
                changes += 1;
            }
        }
    }
    let last = *path.last()?;
    if goal_fraction < f {
        return None;
    }
    let d = (goal_fraction - f) * graph.nodes[last].length;
    Some((cost + d, length + d, changes))
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    path: Vec<usize>,
    fraction: f64,
    done: bool,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other.cost.total_cmp(&self.cost).then_with(|| other.path.cmp(&self.path))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Least-cost lane sequence from `start` to `goal` by uniform-cost search.
/// Equal costs are broken by the lexicographically smallest uid sequence.
pub fn route(base: &BaseMap, graph: &RoutingGraph, start: Point, goal: Point) -> Result<Route, MapError> {
    let s = snap(base, start)?;
    let g = snap(base, goal)?;
    let (Some(si), Some(gi)) = (graph.node_index(&s.lane_uid), graph.node_index(&g.lane_uid)) else {
        return Err(MapError::NoRoute { from: s.lane_uid, to: g.lane_uid });
    };
    route_between(graph, si, s.fraction, gi, g.fraction).ok_or(MapError::NoRoute { from: s.lane_uid, to: g.lane_uid })
}

pub fn route_between(graph: &RoutingGraph, start: usize, start_fraction: f64, goal: usize, goal_fraction: f64) -> Option<Route> {
    let mut heap = BinaryHeap::new();
    let mut settled: HashSet<(usize, u64)> = HashSet::new();
    heap.push(Entry { cost: 0.0, path: vec![start], fraction: start_fraction, done: false });
    while let Some(Entry { cost, path, fraction, done }) = heap.pop() {
        let node = *path.last().unwrap();
        if done {
            let (c, length, lane_changes) = path_cost(graph, &path, start_fraction, goal_fraction)?;
            debug_assert!((c - cost).abs() < 1e-6);
            return Some(Route {
                lanes: path.iter().map(|&i| graph.nodes[i].lane_uid.clone()).collect(),
                cost,
                length,
                lane_changes,
            });
        }
        if !settled.insert((node, fraction.to_bits())) {
            continue;
        }
        if node == goal && goal_fraction >= fraction {
            let d = (goal_fraction - fraction) * graph.nodes[node].length;
            heap.push(Entry { cost: cost + d, path: path.clone(), fraction, done: true });
        }
        for e in graph.out_edges(node) {
            let (c, f) = match e.kind {
                EdgeKind::Successor => (cost + (1.0 - fraction) * graph.nodes[node].length, 0.0),
                _ => (cost + e.cost, fraction),
            };
            if settled.contains(&(e.to, f.to_bits())) {
                continue;
            }
            let mut p = path.clone();
            p.push(e.to);
            heap.push(Entry { cost: c, path: p, fraction: f, done: false });
        }
    }
    None
}
