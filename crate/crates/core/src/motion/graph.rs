use serde::{Deserialize, Serialize};

use super::track::PointTrajectory;
use crate::error::{Error, Result};

/// Undirected graph with signed edge costs; positive prefers joining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityGraph {
    pub num_nodes: usize,
    /// `(a, b, w)` with `a < b`, sorted, no duplicates.
    pub edges: Vec<(u32, u32, f64)>,
}

impl AffinityGraph {
    /// Builds a graph, summing duplicate edges and dropping self-loops.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (u32, u32, f64)>) -> Result<Self> {
        let mut e: Vec<(u32, u32, f64)> = Vec::new();
        for (a, b, w) in edges {
            if a as usize >= num_nodes || b as usize >= num_nodes {
                return Err(Error::OutOfRange { index: a.max(b) as usize, len: num_nodes });
            }
            if !w.is_finite() {
                return Err(Error::Numeric(format!("edge ({a},{b}) has non-finite cost")));
            }
            if a != b {
                e.push((a.min(b), a.max(b), w));
            }
        }
        e.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut edges: Vec<(u32, u32, f64)> = Vec::with_capacity(e.len());
        for (a, b, w) in e {
            match edges.last_mut() {
                Some(last) if (last.0, last.1) == (a, b) => last.2 += w,
                _ => edges.push((a, b, w)),
            }
        }
        Ok(Self { num_nodes, edges })
    }

    pub fn weight(&self, a: u32, b: u32) -> Option<f64> {
        let key = (a.min(b), a.max(b));
        self.edges
            .binary_search_by(|e| (e.0, e.1).cmp(&key))
            .ok()
            .map(|i| self.edges[i].2)
    }

    /// Total cost of the edges cut by `labels` (the multicut objective).
    pub fn cut_cost(&self, labels: &[u32]) -> f64 {
        self.edges
            .iter()
            .filter(|(a, b, _)| labels[*a as usize] != labels[*b as usize])
            .map(|e| e.2)
            .sum()
    }

    /// Per-node adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<(u32, f64)>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b, w) in &self.edges {
            adj[a as usize].push((b, w));
            adj[b as usize].push((a, w));
        }
        adj
    }
}

/// `max_t ‖v_a(t) − v_b(t)‖ / σ_t` over the steps both trajectories make,
/// with `σ_t` the smaller of the two local scales.
pub fn motion_distance(a: &PointTrajectory, b: &PointTrajectory) -> Result<f64> {
    let lo = a.start.max(b.start);
    let hi = a.end().min(b.end());
    if hi < lo + 2 {
        return Err(Error::Input(format!("trajectories {} and {} overlap in fewer than two frames", a.id, b.id)));
    }
    let mut d = 0.0f64;
    for t in lo..hi - 1 {
        let (va, vb) = (a.velocity(t).expect("in range"), b.velocity(t).expect("in range"));
        let sigma = a.sigma(t).expect("in range").min(b.sigma(t).expect("in range"));
        d = d.max((va[0] - vb[0]).hypot(va[1] - vb[1]) / sigma);
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub theta0: f64,
    pub theta1: f64,
    /// Pairs interact only if they come closer than this at a shared frame.
    pub radius: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { theta0: 0.5, theta1: 1.0, radius: 20.0 }
    }
}

/// Edge cost `θ0 − θ1·d(a, b)` for every pair of trajectories that share
/// at least two frames and come within `radius` of each other. Node `i`
/// is `trajectories[i]`.
pub fn build_graph(trajectories: &[PointTrajectory], cfg: &GraphConfig) -> Result<AffinityGraph> {
    let frames = trajectories.iter().map(PointTrajectory::end).max().unwrap_or(0);
    let r2 = cfg.radius * cfg.radius;
    let cell = cfg.radius.max(1.0);
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut buckets: std::collections::BTreeMap<(i64, i64), Vec<u32>> = Default::default();
    for t in 0..frames {
        buckets.clear();
        for (i, tr) in trajectories.iter().enumerate() {
            if let Some(p) = tr.position(t) {
                buckets.entry(((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)).or_default().push(i as u32);
            }
        }
        for (&(cx, cy), members) in &buckets {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(others) = buckets.get(&(cx + dx, cy + dy)) else { continue };
                    for &a in members {
                        let pa = trajectories[a as usize].position(t).expect("alive");
                        for &b in others {
                            if b <= a {
                                continue;
                            }
                            let pb = trajectories[b as usize].position(t).expect("alive");
                            if (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) < r2 {
                                pairs.push((a, b));
                            }
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut edges = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let (ta, tb) = (&trajectories[a as usize], &trajectories[b as usize]);
        if ta.start.max(tb.start) + 2 > ta.end().min(tb.end()) {
            continue;
        }
        let d = motion_distance(ta, tb)?;
        edges.push((a, b, cfg.theta0 - cfg.theta1 * d));
    }
    AffinityGraph::new(trajectories.len(), edges)
}
