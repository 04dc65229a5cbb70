//! Leiden community detection with a weighted-modularity objective.
//!
//! Each pass runs the three Leiden phases until the aggregate graph stops
//! shrinking:
//!
//! 1. fast local moving of nodes between communities,
//! 2. refinement, which merges nodes only inside their local-moving
//!    community and only into well-connected sub-communities,
//! 3. aggregation of the refined communities into super-nodes, seeded with
//!    the local-moving partition.
//!
//! Passes repeat, each starting from the previous result, until a pass
//! improves modularity by less than [`CONVERGENCE_EPS`].

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graphbuild::GraphLayer;

pub const CONVERGENCE_EPS: f64 = 1e-12;
/// Temperature of the randomized merge choice during refinement.
const REFINE_THETA: f64 = 0.01;
const MAX_PASSES: usize = 50;
const MAX_LEVELS: usize = 64;

/// Assignment of node indices to dense community ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub community_count: usize,
}

impl Partition {
    pub fn singletons(n: usize) -> Self {
        Self { assignment: (0..n).collect(), community_count: n }
    }

    /// Relabels arbitrary labels to `0..k` in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignment: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { community_count: map.len(), assignment }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Weighted undirected graph with self-loops, the working form for every
/// Leiden level. `self_loop[i]` is `A_ii`; `degree[i] = Σ_j A_ij`.
#[derive(Debug, Clone)]
struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    /// `2m`, the sum of all degrees.
    total: f64,
}

impl Graph {
    fn from_layer(layer: &GraphLayer) -> Self {
        let n = layer.node_count();
        let mut adj = vec![Vec::new(); n];
        for e in &layer.edges {
            if e.u != e.v && e.w > 0.0 {
                adj[e.u].push((e.v, e.w));
                adj[e.v].push((e.u, e.w));
            }
        }
        Self::finish(adj, vec![0.0; n])
    }

    fn finish(mut adj: Vec<Vec<(usize, f64)>>, self_loop: Vec<f64>) -> Self {
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
        }
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loop)
            .map(|(l, s)| s + l.iter().map(|&(_, w)| w).sum::<f64>())
            .collect();
        let total = degree.iter().sum();
        Self { adj, self_loop, degree, total }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    /// Collapses each community of `labels` (dense, `k` of them) into a node.
    fn aggregate(&self, labels: &[usize], k: usize) -> Graph {
        let mut self_loop = vec![0.0; k];
        let mut acc: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); k];
        for i in 0..self.n() {
            let ci = labels[i];
            self_loop[ci] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                let cj = labels[j];
                if ci == cj {
                    self_loop[ci] += w;
                } else {
                    *acc[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        let adj = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        Graph::finish(adj, self_loop)
    }

    fn modularity(&self, labels: &[usize], resolution: f64) -> f64 {
        if self.total <= 0.0 {
            return 0.0;
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for i in 0..self.n() {
            let c = labels[i];
            tot[c] += self.degree[i];
            internal[c] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                if labels[j] == c {
                    internal[c] += w;
                }
            }
        }
        let m2 = self.total;
        internal.iter().zip(&tot).map(|(a, t)| a / m2 - resolution * (t / m2) * (t / m2)).sum()
    }
}

/// Weighted modularity `Q = (1/2m) Σ_ij [w_ij − γ k_i k_j / 2m] δ(c_i, c_j)`.
/// Zero for a layer without edge weight.
pub fn quality(layer: &GraphLayer, partition: &Partition, resolution: f64) -> f64 {
    Graph::from_layer(layer).modularity(&partition.assignment, resolution)
}

/// Progress report handed to [`detect_communities_with`] after each pass.
#[derive(Debug, Clone, Copy)]
pub struct PassInfo {
    pub pass: usize,
    pub quality: f64,
    pub community_count: usize,
}

pub fn detect_communities(layer: &GraphLayer, resolution: f64, seed: u64) -> Partition {
    detect_communities_with(layer, resolution, seed, |_| {})
}

pub fn detect_communities_with(
    layer: &GraphLayer,
    resolution: f64,
    seed: u64,
    mut on_pass: impl FnMut(PassInfo),
) -> Partition {
    let graph = Graph::from_layer(layer);
    let n = graph.n();
    if graph.total <= 0.0 {
        return Partition::singletons(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).collect();
    let mut best = graph.modularity(&labels, resolution);
    for pass in 0..MAX_PASSES {
        let candidate = leiden_pass(&graph, &labels, resolution, &mut rng);
        let q = graph.modularity(&candidate, resolution);
        let improved = q - best;
        if improved > 0.0 {
            labels = candidate;
            best = q;
        }
        on_pass(PassInfo {
            pass,
            quality: best,
            community_count: Partition::from_labels(&labels).community_count,
        });
        if improved < CONVERGENCE_EPS {
            break;
        }
    }
    let labels = split_disconnected(&graph, &labels);
    Partition::from_labels(&labels)
}

/// One multilevel Leiden pass starting from `initial` on the base graph.
fn leiden_pass(base: &Graph, initial: &[usize], resolution: f64, rng: &mut impl Rng) -> Vec<usize> {
    let mut graph = base.clone();
    // members[i] = base nodes folded into aggregate node i
    let mut members: Vec<Vec<usize>> = (0..base.n()).map(|i| vec![i]).collect();
    let mut part = dense(initial);
    for _ in 0..MAX_LEVELS {
        move_nodes_fast(&graph, &mut part, resolution, rng);
        let k = count(&part);
        if k == graph.n() {
            break;
        }
        let mut refined = refine(&graph, &part, resolution, rng);
        let mut r = count(&refined);
        if r == graph.n() {
            // refinement found nothing to merge; fold the moving partition instead
            refined = part.clone();
            r = k;
        }
        let next = graph.aggregate(&refined, r);
        let mut next_part = vec![0; r];
        let mut next_members = vec![Vec::new(); r];
        for i in 0..graph.n() {
            next_part[refined[i]] = part[i];
            next_members[refined[i]].extend_from_slice(&members[i]);
        }
        graph = next;
        members = next_members;
        part = dense(&next_part);
    }
    let mut labels = vec![0; base.n()];
    for (agg, base_nodes) in members.iter().enumerate() {
        for &b in base_nodes {
            labels[b] = part[agg];
        }
    }
    dense(&labels)
}

fn dense(labels: &[usize]) -> Vec<usize> {
    Partition::from_labels(labels).assignment
}

fn count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Sums edge weight from `v` into each neighbouring community, returning
/// `(community, weight)` in first-seen order over `v`'s sorted neighbours.
fn neighbour_weights(
    graph: &Graph,
    v: usize,
    part: &[usize],
    scratch: &mut [f64],
    touched: &mut Vec<usize>,
) {
    touched.clear();
    for &(j, w) in &graph.adj[v] {
        let c = part[j];
        if scratch[c] == 0.0 && !touched.contains(&c) {
            touched.push(c);
        }
        scratch[c] += w;
    }
}

/// Queue-driven local moving: every node is visited once in random order;
/// a node that moves re-enqueues neighbours that now sit outside its new
/// community.
fn move_nodes_fast(graph: &Graph, part: &mut Vec<usize>, resolution: f64, rng: &mut impl Rng) {
    let n = graph.n();
    let m2 = graph.total;
    // community ids may range up to n; keep one spare id per node for empties
    let cap = n.max(count(part)) + 1;
    let mut tot = vec![0.0; cap];
    let mut size = vec![0usize; cap];
    for i in 0..n {
        tot[part[i]] += graph.degree[i];
        size[part[i]] += 1;
    }
    let mut empty: Vec<usize> = (0..cap).filter(|&c| size[c] == 0).rev().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into();
    let mut queued = vec![true; n];
    let mut scratch = vec![0.0; cap];
    let mut touched = Vec::new();

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let old = part[v];
        let kv = graph.degree[v];
        tot[old] -= kv;
        size[old] -= 1;
        neighbour_weights(graph, v, part, &mut scratch, &mut touched);
        let gain = |c: usize, w: f64| w - resolution * kv * tot[c] / m2;
        let mut best_c = old;
        let mut best_gain = gain(old, scratch[old]);
        for &c in &touched {
            let g = gain(c, scratch[c]);
            if g > best_gain {
                best_gain = g;
                best_c = c;
            }
        }
        if best_gain < 0.0 && size[old] > 0 {
            // an empty community is worth exactly zero
            best_c = *empty.last().expect("spare community id");
        }
        for &c in &touched {
            scratch[c] = 0.0;
        }
        if size[old] == 0 && best_c != old {
            empty.push(old);
        }
        if let Some(pos) = empty.iter().position(|&c| c == best_c) {
            empty.remove(pos);
        }
        tot[best_c] += kv;
        size[best_c] += 1;
        part[v] = best_c;
        if best_c != old {
            for &(j, _) in &graph.adj[v] {
                if !queued[j] && part[j] != best_c {
                    queued[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let d = dense(part);
    *part = d;
}

/// Refinement: starting from singletons, merges each still-singleton,
/// well-connected node into a well-connected sub-community of its own
/// local-moving community, chosen at random with probability proportional
/// to `exp(gain / θ)` among non-negative gains.
fn refine(graph: &Graph, part: &[usize], resolution: f64, rng: &mut impl Rng) -> Vec<usize> {
    let n = graph.n();
    let m2 = graph.total;
    let k = count(part);
    let mut comm_tot = vec![0.0; k];
    for i in 0..n {
        comm_tot[part[i]] += graph.degree[i];
    }
    // weight from each node to the rest of its local-moving community
    let inner: Vec<f64> = (0..n)
        .map(|i| graph.adj[i].iter().filter(|&&(j, _)| part[j] == part[i]).map(|&(_, w)| w).sum())
        .collect();

    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_tot: Vec<f64> = graph.degree.clone();
    let mut r_ext: Vec<f64> = inner.clone();
    let mut r_size = vec![1usize; n];

    let mut by_comm: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..n {
        by_comm[part[i]].push(i);
    }
    let mut scratch = vec![0.0; n];
    let mut touched = Vec::new();
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for nodes in &mut by_comm {
        nodes.shuffle(rng);
        for &v in nodes.iter() {
            let c = part[v];
            let kv = graph.degree[v];
            if r_size[refined[v]] != 1 {
                continue;
            }
            if inner[v] < resolution * kv * (comm_tot[c] - kv) / m2 {
                continue;
            }
            touched.clear();
            for &(j, w) in &graph.adj[v] {
                if part[j] != c {
                    continue;
                }
                let t = refined[j];
                if scratch[t] == 0.0 && !touched.contains(&t) {
                    touched.push(t);
                }
                scratch[t] += w;
            }
            let own = refined[v];
            candidates.clear();
            candidates.push((own, 0.0));
            for &t in &touched {
                if t == own {
                    continue;
                }
                let well_connected = r_ext[t] >= resolution * r_tot[t] * (comm_tot[c] - r_tot[t]) / m2;
                let g = scratch[t] - resolution * kv * r_tot[t] / m2;
                if well_connected && g >= 0.0 {
                    candidates.push((t, g));
                }
            }
            let chosen = pick(&candidates, rng);
            let w_vt = if chosen == own { 0.0 } else { scratch[chosen] };
            for &t in &touched {
                scratch[t] = 0.0;
            }
            if chosen != own {
                debug_assert!(by_comm_contains(part, refined.as_slice(), chosen, c));
                r_ext[chosen] = r_ext[chosen] + inner[v] - 2.0 * w_vt;
                r_tot[chosen] += kv;
                r_size[chosen] += 1;
                r_size[own] = 0;
                r_tot[own] = 0.0;
                refined[v] = chosen;
            }
        }
    }
    dense(&refined)
}

fn by_comm_contains(part: &[usize], refined: &[usize], t: usize, c: usize) -> bool {
    refined.iter().zip(part).any(|(&r, &p)| r == t && p == c)
}

fn pick(candidates: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let max = candidates.iter().map(|&(_, g)| g).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = candidates.iter().map(|&(_, g)| ((g - max) / REFINE_THETA).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (&(t, _), w) in candidates.iter().zip(&weights) {
        if x < *w {
            return t;
        }
        x -= w;
    }
    candidates.last().expect("own community is always a candidate").0
}

/// Splits every community into its connected components. Splitting a
/// community along a zero-weight cut never lowers modularity.
fn split_disconnected(graph: &Graph, labels: &[usize]) -> Vec<usize> {
    let n = graph.n();
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        out[start] = next;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &(j, _) in &graph.adj[v] {
                if out[j] == usize::MAX && labels[j] == labels[start] {
                    out[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::EmbeddingVector;
    use crate::graphbuild::Edge;

    pub(crate) fn layer(n: usize, edges: &[(usize, usize, f64)]) -> GraphLayer {
        GraphLayer {
            layer_index: 0,
            node_ids: (0..n as u64).collect(),
            embeddings: (0..n).map(|_| EmbeddingVector::normalized(vec![1.0]).unwrap()).collect(),
            edges: edges.iter().map(|&(u, v, w)| Edge { u, v, w }).collect(),
        }
    }

    // Independent pairwise evaluation of the modularity formula.
    fn modularity_oracle(n: usize, edges: &[(usize, usize, f64)], labels: &[usize], gamma: f64) -> f64 {
        let mut a = vec![vec![0.0; n]; n];
        for &(u, v, w) in edges {
            a[u][v] += w;
            a[v][u] += w;
        }
        let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        let m2: f64 = k.iter().sum();
        if m2 == 0.0 {
            return 0.0;
        }
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    q += a[i][j] - gamma * k[i] * k[j] / m2;
                }
            }
        }
        q / m2
    }

    #[test]
    fn quality_examples() {
        let edges = [(0, 1, 1.0), (2, 3, 1.0)];
        let l = layer(4, &edges);
        let paired = Partition::from_labels(&[0, 0, 1, 1]);
        assert!((quality(&l, &paired, 1.0) - 0.5).abs() < 1e-12);
        assert!((modularity_oracle(4, &edges, &[0, 0, 1, 1], 1.0) - 0.5).abs() < 1e-12);
        let single = Partition::singletons(4);
        assert!((quality(&l, &single, 1.0) + 0.25).abs() < 1e-12);
        assert!((modularity_oracle(4, &edges, &[0, 1, 2, 3], 1.0) + 0.25).abs() < 1e-12);
        assert_eq!(quality(&layer(1, &[]), &Partition::singletons(1), 1.0), 0.0);
    }

    #[test]
    fn quality_matches_oracle_on_weighted_graph() {
        let edges = [(0, 1, 0.8), (1, 2, 0.5), (2, 3, 0.9), (3, 0, 0.3), (1, 3, 0.6)];
        let l = layer(5, &edges);
        for labels in [[0, 0, 1, 1, 2], [0, 1, 0, 1, 1], [0, 0, 0, 0, 0]] {
            for gamma in [0.5, 1.0, 2.0] {
                let got = quality(&l, &Partition::from_labels(&labels), gamma);
                let want = modularity_oracle(5, &edges, &labels, gamma);
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edgeless_layer_gives_singletons() {
        let p = detect_communities(&layer(5, &[]), 1.0, 7);
        assert_eq!(p.community_count, 5);
    }

    fn two_cliques() -> Vec<(usize, usize, f64)> {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
        }
        edges.push((3, 4, 0.6));
        edges
    }

    #[test]
    fn separates_two_cliques() {
        let l = layer(8, &two_cliques());
        for seed in 0..20 {
            let p = detect_communities(&l, 1.0, seed);
            assert_eq!(p.assignment, vec![0, 0, 0, 0, 1, 1, 1, 1], "seed {seed}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_never_below_singletons() {
        let edges = [(0, 1, 0.9), (1, 2, 0.8), (2, 0, 0.7), (3, 4, 0.9), (4, 5, 0.6), (2, 3, 0.55), (5, 6, 0.95)];
        let l = layer(7, &edges);
        let a = detect_communities(&l, 1.0, 42);
        let b = detect_communities(&l, 1.0, 42);
        assert_eq!(a, b);
        assert!(quality(&l, &a, 1.0) >= quality(&l, &Partition::singletons(7), 1.0));
    }

    #[test]
    fn pass_quality_never_decreases() {
        let l = layer(8, &two_cliques());
        let mut seen = Vec::new();
        detect_communities_with(&l, 1.0, 3, |info| seen.push(info.quality));
        assert!(!seen.is_empty());
        assert!(seen.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn refinement_stays_inside_moving_communities() {
        let g = Graph::from_layer(&layer(8, &two_cliques()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for part in [vec![0, 0, 0, 0, 1, 1, 1, 1], vec![0, 0, 1, 1, 1, 1, 2, 2], vec![0; 8]] {
            let refined = refine(&g, &part, 1.0, &mut rng);
            for i in 0..8 {
                for j in 0..8 {
                    if refined[i] == refined[j] {
                        assert_eq!(part[i], part[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn communities_are_connected() {
        // a path and an isolated pair
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (3, 4, 1.0)];
        let l = layer(6, &edges);
        let p = detect_communities(&l, 1.0, 0);
        assert_ne!(p.assignment[2], p.assignment[3]);
        assert_ne!(p.assignment[5], p.assignment[4]);
    }

    #[test]
    fn split_disconnected_separates_components() {
        let g = Graph::from_layer(&layer(4, &[(0, 1, 1.0), (2, 3, 1.0)]));
        assert_eq!(split_disconnected(&g, &[0, 0, 0, 0]), vec![0, 0, 1, 1]);
    }
}
