//! Downsampled centerlines for visualization.

use serde::{Deserialize, Serialize};

use super::base::BaseMap;
use super::{Point, MAP_SCHEMA_VERSION};

pub const DEFAULT_SIM_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLane {
    pub lane_uid: String,
    pub centerline: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMap {
    pub schema_version: u32,
    pub epsilon: f64,
    pub lanes: Vec<SimLane>,
}

pub fn build_sim_map(base: &BaseMap, epsilon: f64) -> SimMap {
    SimMap {
        schema_version: MAP_SCHEMA_VERSION,
        epsilon,
        lanes: base
            .lanes
            .iter()
            .map(|l| SimLane { lane_uid: l.lane_uid.clone(), centerline: simplify(&l.centerline, epsilon) })
            .collect(),
    }
}

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let u = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - u * dx).hypot(p[1] - a[1] - u * dy)
}

/// Ramer-Douglas-Peucker. `epsilon <= 0` returns the input unchanged.
pub fn simplify(pts: &[Point], epsilon: f64) -> Vec<Point> {
    if epsilon <= 0.0 || pts.len() < 3 {
        return pts.to_vec();
    }
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;
    let mut stack = vec![(0, pts.len() - 1)];
    while let Some((i, j)) = stack.pop() {
        let mut far = (0.0, i);
        for k in i + 1..j {
            let d = segment_distance(pts[k], pts[i], pts[j]);
            if d > far.0 {
                far = (d, k);
            }
        }
        if far.0 > epsilon {
            keep[far.1] = true;
            stack.push((i, far.1));
            stack.push((far.1, j));
        }
    }
    pts.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_deviation(dense: &[Point], simple: &[Point]) -> f64 {
        dense
            .iter()
            .map(|p| simple.windows(2).map(|w| segment_distance(*p, w[0], w[1])).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }

    #[test]
    fn straight_collapses() {
        let pts: Vec<Point> = (0..=420).map(|i| [i as f64, -27.0]).collect();
        assert_eq!(simplify(&pts, 0.5), vec![[0.0, -27.0], [420.0, -27.0]]);
    }

    #[test]
    fn quarter_circle() {
        let n = 158;
        let pts: Vec<Point> = (0..=n)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
                [100.0 * a.sin(), 100.0 - 100.0 * a.cos()]
            })
            .collect();
        let s = simplify(&pts, 0.5);
        assert!(s.len() < pts.len());
        assert!(max_deviation(&pts, &s) <= 0.5);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let pts = vec![[0.0, 0.0], [1.0, 0.1], [2.0, 0.0]];
        assert_eq!(simplify(&pts, 0.0), pts);
    }

    proptest! {
        #[test]
        fn deviation_bound(ys in prop::collection::vec(-5.0f64..5.0, 2..60), eps in 0.01f64..2.0) {
            let pts: Vec<Point> = ys.iter().enumerate().map(|(i, y)| [i as f64, *y]).collect();
            let s = simplify(&pts, eps);
            prop_assert_eq!(s.first(), pts.first());
            prop_assert_eq!(s.last(), pts.last());
            prop_assert!(max_deviation(&pts, &s) <= eps + 1e-12);
        }
    }
}
