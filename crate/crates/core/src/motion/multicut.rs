//! Heuristic minimum-cost multicut.
//!
//! Greedy additive edge contraction repeatedly joins the two clusters with
//! the largest positive total edge cost between them. The result is then
//! refined by Kernighan–Lin sweeps with joins: for every pair of adjacent
//! clusters (and every cluster against an empty one) a sequence of single
//! node moves is built greedily and its best prefix applied, or the pair is
//! joined outright when that is better. Refinement runs from several
//! starting partitions and keeps the cheapest.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::graph::AffinityGraph;

const EPS: f64 = 1e-12;

/// Cluster label per node, contiguous from 0 in order of first node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub labels: Vec<u32>,
}

impl ClusterLabeling {
    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }
}

/// Renumbers arbitrary cluster ids to `0..k` by first occurrence.
pub fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

struct Candidate {
    w: f64,
    a: u32,
    b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    // Largest weight first, then smallest ids.
    fn cmp(&self, o: &Self) -> Ordering {
        self.w.total_cmp(&o.w).then_with(|| (o.a, o.b).cmp(&(self.a, self.b)))
    }
}

/// Greedy additive edge contraction. Every merge strictly lowers the cut
/// cost, and it stops when no pair of clusters attracts.
pub fn gaec(graph: &AffinityGraph) -> Vec<u32> {
    let n = graph.num_nodes;
    let mut adj: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); n];
    for &(a, b, w) in &graph.edges {
        *adj[a as usize].entry(b).or_insert(0.0) += w;
        *adj[b as usize].entry(a).or_insert(0.0) += w;
    }
    let mut heap: BinaryHeap<Candidate> = graph
        .edges
        .iter()
        .filter(|e| e.2 > 0.0)
        .map(|&(a, b, w)| Candidate { w, a, b })
        .collect();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    let mut alive = vec![true; n];
    while let Some(Candidate { w, a, b }) = heap.pop() {
        if !alive[a as usize] || !alive[b as usize] || adj[a as usize].get(&b).map(|v| v.to_bits()) != Some(w.to_bits()) {
            continue;
        }
        // Fold the smaller adjacency into the larger one.
        let (keep, gone) = if adj[a as usize].len() >= adj[b as usize].len() { (a, b) } else { (b, a) };
        alive[gone as usize] = false;
        parent[gone as usize] = keep;
        let moved = std::mem::take(&mut adj[gone as usize]);
        adj[keep as usize].remove(&gone);
        for (x, wx) in moved {
            if x == keep {
                continue;
            }
            adj[x as usize].remove(&gone);
            let total = {
                let e = adj[keep as usize].entry(x).or_insert(0.0);
                *e += wx;
                *e
            };
            adj[x as usize].insert(keep, total);
            if total > 0.0 {
                heap.push(Candidate { w: total, a: keep.min(x), b: keep.max(x) });
            }
        }
    }
    let find = |mut i: u32| {
        while parent[i as usize] != i {
            i = parent[i as usize];
        }
        i
    };
    canonical(&(0..n as u32).map(find).collect::<Vec<_>>())
}

/// Kernighan–Lin refinement with joins, starting from `labels`.
pub fn refine(graph: &AffinityGraph, labels: &[u32], max_rounds: usize) -> Vec<u32> {
    let adj = graph.adjacency();
    let mut labels = labels.to_vec();
    let mut members: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i as u32);
    }
    let mut next_label = labels.iter().max().map_or(0, |m| m + 1);
    let mut dirty: BTreeSet<u32> = members.keys().copied().collect();
    let mut side = vec![false; graph.num_nodes];
    let mut in_pair = vec![false; graph.num_nodes];
    let mut gain = vec![0.0f64; graph.num_nodes];
    for _ in 0..max_rounds {
        if dirty.is_empty() {
            break;
        }
        let mut pairs: BTreeSet<(u32, Option<u32>)> = BTreeSet::new();
        for &(a, b, _) in &graph.edges {
            let (la, lb) = (labels[a as usize], labels[b as usize]);
            if la != lb && (dirty.contains(&la) || dirty.contains(&lb)) {
                pairs.insert((la.min(lb), Some(la.max(lb))));
            }
        }
        for (&l, m) in &members {
            if m.len() > 1 && dirty.contains(&l) {
                pairs.insert((l, None));
            }
        }
        let mut now_dirty = BTreeSet::new();
        for (ca, cb) in pairs {
            let Some(ma) = members.get(&ca) else { continue };
            let mb: &[u32] = match cb {
                Some(cb) => match members.get(&cb) {
                    Some(m) => m,
                    None => continue,
                },
                None => &[],
            };
            let nodes: Vec<u32> = ma.iter().chain(mb).copied().collect();
            for &i in ma {
                side[i as usize] = false;
                in_pair[i as usize] = true;
            }
            for &i in mb {
                side[i as usize] = true;
                in_pair[i as usize] = true;
            }
            let mut join_gain = 0.0;
            for &i in &nodes {
                let mut g = 0.0;
                for &(j, w) in &adj[i as usize] {
                    if in_pair[j as usize] {
                        if side[j as usize] == side[i as usize] {
                            g -= w;
                        } else {
                            g += w;
                            if !side[i as usize] {
                                join_gain += w;
                            }
                        }
                    }
                }
                gain[i as usize] = g;
            }
            let mut moved = vec![false; nodes.len()];
            let mut seq: Vec<usize> = Vec::new();
            let (mut cum, mut best, mut best_len) = (0.0, 0.0, 0);
            for _ in 0..nodes.len() {
                let mut pick: Option<usize> = None;
                for (k, &i) in nodes.iter().enumerate() {
                    if !moved[k] && pick.is_none_or(|p| gain[i as usize] > gain[nodes[p] as usize]) {
                        pick = Some(k);
                    }
                }
                let k = pick.expect("unmoved node remains");
                let i = nodes[k] as usize;
                moved[k] = true;
                cum += gain[i];
                side[i] = !side[i];
                for &(j, w) in &adj[i] {
                    if in_pair[j as usize] {
                        gain[j as usize] += if side[j as usize] == side[i] { -2.0 * w } else { 2.0 * w };
                    }
                }
                seq.push(k);
                if cum > best + EPS {
                    best = cum;
                    best_len = seq.len();
                }
            }
            for &i in &nodes {
                in_pair[i as usize] = false;
            }
            let changed = if cb.is_some() && join_gain > EPS && join_gain >= best {
                let cb = cb.expect("checked");
                let moved_nodes = members.remove(&cb).expect("present");
                for &i in &moved_nodes {
                    labels[i as usize] = ca;
                }
                members.get_mut(&ca).expect("present").extend(moved_nodes);
                true
            } else if best_len > 0 {
                let target_b = cb.unwrap_or_else(|| {
                    next_label += 1;
                    next_label - 1
                });
                let b_set: BTreeSet<u32> = mb.iter().copied().collect();
                for &k in &seq[..best_len] {
                    let i = nodes[k];
                    labels[i as usize] = if b_set.contains(&i) { ca } else { target_b };
                }
                let mut na = Vec::new();
                let mut nb = Vec::new();
                for &i in &nodes {
                    if labels[i as usize] == ca {
                        na.push(i);
                    } else {
                        nb.push(i);
                    }
                }
                for (l, m) in [(ca, na), (target_b, nb)] {
                    if m.is_empty() {
                        members.remove(&l);
                    } else {
                        members.insert(l, m);
                    }
                }
                now_dirty.insert(target_b);
                true
            } else {
                false
            };
            if changed {
                now_dirty.insert(ca);
                now_dirty.extend(cb);
            }
        }
        dirty = now_dirty;
    }
    canonical(&labels)
}

/// Starting partitions for the refinement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    Contraction,
    Singletons,
    Single,
}

pub const DEFAULT_STARTS: [Start; 3] = [Start::Contraction, Start::Singletons, Start::Single];

pub fn cluster_with(graph: &AffinityGraph, starts: &[Start], max_rounds: usize) -> ClusterLabeling {
    let n = graph.num_nodes;
    let mut best: Option<(f64, Vec<u32>)> = None;
    for s in starts {
        let init: Vec<u32> = match s {
            Start::Contraction => gaec(graph),
            Start::Singletons => (0..n as u32).collect(),
            Start::Single => vec![0; n],
        };
        let refined = refine(graph, &init, max_rounds);
        let cost = graph.cut_cost(&refined);
        if best.as_ref().is_none_or(|(c, _)| cost < *c - EPS) {
            best = Some((cost, refined));
        }
    }
    ClusterLabeling { labels: best.map_or_else(|| gaec(graph), |b| b.1) }
}

/// Default clustering: contraction plus multi-start refinement.
pub fn cluster(graph: &AffinityGraph) -> ClusterLabeling {
    cluster_with(graph, &DEFAULT_STARTS, 100)
}
