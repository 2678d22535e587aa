//! The weight-constrained assignment LP and its transportation solver.
//!
//! Points `x_j` with weights `w_j` are fractionally assigned to `k` clusters
//! with prescribed cluster weights `kappa_i`, minimizing the total cost
//! `sum xi_ij w_j |x_j - s_i|^2_{A_i}`. In flow form this is a classical
//! balanced transportation problem (supplies `w`, demands `kappa`, arc costs
//! `c_ij`), solved here by a network simplex on the bipartite graph.
//!
//! Arcs are restricted to each point's `m` cheapest clusters; optimality
//! over the *full* arc set is certified through dual feasibility, escalating
//! `m` (doubling, with violated arcs added) until the certificate holds.
//! The optimal duals are exactly the size parameters of a compatible
//! anisotropic power diagram: `gamma` from the cluster side, normalized to
//! `min gamma = 0`.

use rayon::prelude::*;
use thiserror::Error;

use crate::diagram::{DiagramError, DiagramParams};
use crate::linalg::{self, Mat3, Vec3};
use crate::stats::GrainStats;
use crate::support::ImageSupport;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cluster {0} has non-positive target weight {1}")]
    NonPositiveTarget(usize, f64),
    #[error("empty support")]
    EmptySupport,
    #[error("candidate count must be at least 1")]
    NoCandidates,
    #[error("pivot limit {0} exceeded")]
    PivotLimit(usize),
    #[error("model has {model} clusters but targets have {targets}")]
    SizeMismatch { model: usize, targets: usize },
}

/// Fixed per-cluster shape matrices and sites for the assignment cost.
#[derive(Debug, Clone)]
pub struct SiteModel {
    pub shapes: Vec<Mat3>,
    pub sites: Vec<Vec3>,
}

impl SiteModel {
    /// Measured model: inverse covariances and centroids.
    pub fn from_stats(stats: &GrainStats) -> Self {
        Self {
            shapes: stats.precision.clone(),
            sites: stats.centroid.clone(),
        }
    }

    pub fn from_diagram(diagram: &DiagramParams) -> Self {
        Self {
            shapes: diagram.shapes().to_vec(),
            sites: diagram.sites().to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.sites.len()
    }

    #[inline]
    pub fn cost(&self, i: usize, x: &Vec3) -> f64 {
        linalg::quad_form(&self.shapes[i], &self.sites[i], x)
    }
}

/// Cluster weight targets, rescaled so their sum matches the support.
#[derive(Debug, Clone)]
pub struct TargetWeights {
    kappa: Vec<f64>,
}

impl TargetWeights {
    /// Rescales `kappa` by `support_total / sum(kappa)`.
    pub fn new(kappa: Vec<f64>, support_total: f64) -> Result<Self, TransportError> {
        for (i, &v) in kappa.iter().enumerate() {
            if !(v > 0.0) {
                return Err(TransportError::NonPositiveTarget(i, v));
            }
        }
        let sum: f64 = kappa.iter().sum();
        let scale = support_total / sum;
        Ok(Self {
            kappa: kappa.into_iter().map(|v| v * scale).collect(),
        })
    }

    pub fn from_counts(kappa: &[u64], support_total: f64) -> Result<Self, TransportError> {
        Self::new(kappa.iter().map(|&v| v as f64).collect(), support_total)
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn k(&self) -> usize {
        self.kappa.len()
    }
}

/// Sparse fractional assignment: `(cluster, point, fraction)` with positive
/// fractions only, sorted by point then cluster. Indices are 0-based.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub entries: Vec<(u32, u32, f64)>,
}

impl Clustering {
    /// Points assigned to two or more clusters.
    pub fn fractional_point_count(&self) -> usize {
        let mut count = 0;
        let mut run = 0usize;
        let mut prev = u32::MAX;
        for &(_, j, _) in &self.entries {
            if j == prev {
                run += 1;
                if run == 2 {
                    count += 1;
                }
            } else {
                prev = j;
                run = 1;
            }
        }
        count
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.entries).expect("clustering serializes")
    }
}

/// Dual variables of the assignment LP.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Per-point potential.
    pub eta: Vec<f64>,
    /// Per-cluster size, normalized to `min = 0`.
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub objective: f64,
    pub dual_objective: f64,
    pub pivots: usize,
    pub escalations: usize,
    pub final_candidates_per_point: usize,
    pub arcs: usize,
}

#[derive(Debug, Clone)]
pub struct WcaaSolution {
    pub clustering: Clustering,
    pub duals: DualSolution,
    pub report: SolveReport,
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Arc {
    point: u32,
    cluster: u32,
    cost: f64,
}

/// Network simplex state. Nodes `0..n` are points, `n..n+k` clusters; the
/// spanning tree is rooted at cluster 0. Potentials carry `eta` on point
/// nodes and `gamma` on cluster nodes, tight (`eta_j - gamma_i = c_ij`) on
/// tree arcs.
struct Solver<'a> {
    support: &'a ImageSupport,
    model: &'a SiteModel,
    n: usize,
    k: usize,
    arcs: Vec<Arc>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    /// Per point: `(cluster, arc index)` sorted by cluster, for dedup.
    point_arcs: Vec<Vec<(u32, u32)>>,
    parent: Vec<u32>,
    parent_arc: Vec<u32>,
    next_dft: Vec<u32>,
    prev_dft: Vec<u32>,
    last_desc: Vec<u32>,
    size: Vec<u32>,
    potential: Vec<f64>,
    block_start: usize,
    bland: bool,
    stall: usize,
    cost_scale: f64,
}

const STALL_LIMIT: usize = 500;

impl<'a> Solver<'a> {
    fn new(
        support: &'a ImageSupport,
        model: &'a SiteModel,
        targets: &TargetWeights,
        m: usize,
    ) -> Result<Self, TransportError> {
        let n = support.len();
        let k = model.k();
        if n == 0 {
            return Err(TransportError::EmptySupport);
        }
        if m == 0 {
            return Err(TransportError::NoCandidates);
        }

        let mut solver = Self {
            support,
            model,
            n,
            k,
            arcs: Vec::new(),
            flow: Vec::new(),
            in_tree: Vec::new(),
            point_arcs: vec![Vec::new(); n],
            parent: vec![NONE; n + k],
            parent_arc: vec![NONE; n + k],
            next_dft: vec![NONE; n + k],
            prev_dft: vec![NONE; n + k],
            last_desc: vec![NONE; n + k],
            size: vec![1; n + k],
            potential: vec![0.0; n + k],
            block_start: 0,
            bland: false,
            stall: 0,
            cost_scale: 1.0,
        };
        solver.add_candidate_arcs(m);
        solver.build_initial_tree(targets);
        solver.cost_scale = solver
            .arcs
            .iter()
            .fold(1.0f64, |acc, a| acc.max(a.cost.abs()));
        Ok(solver)
    }

    fn root(&self) -> u32 {
        self.n as u32
    }

    fn node_count(&self) -> usize {
        self.n + self.k
    }

    fn arc_index(&self, point: u32, cluster: u32) -> Option<u32> {
        let list = &self.point_arcs[point as usize];
        list.binary_search_by_key(&cluster, |&(c, _)| c)
            .ok()
            .map(|pos| list[pos].1)
    }

    fn push_arc(&mut self, point: u32, cluster: u32, cost: f64) -> u32 {
        let idx = self.arcs.len() as u32;
        let list = &mut self.point_arcs[point as usize];
        let pos = list
            .binary_search_by_key(&cluster, |&(c, _)| c)
            .expect_err("arc must not exist yet");
        list.insert(pos, (cluster, idx));
        self.arcs.push(Arc {
            point,
            cluster,
            cost,
        });
        self.flow.push(0.0);
        self.in_tree.push(false);
        idx
    }

    /// Add arcs to each point's `m` cheapest clusters by raw cost.
    fn add_candidate_arcs(&mut self, m: usize) {
        let m = m.min(self.k);
        let model = self.model;
        let support = self.support;
        let k = self.k;
        let point_arcs = &self.point_arcs;
        let new_per_point: Vec<Vec<(u32, f64)>> = (0..self.n)
            .into_par_iter()
            .map(|j| {
                let x = support.position(j);
                let mut costs: Vec<(f64, u32)> =
                    (0..k).map(|i| (model.cost(i, x), i as u32)).collect();
                costs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                costs
                    .into_iter()
                    .take(m)
                    .filter(|&(_, i)| {
                        point_arcs[j]
                            .binary_search_by_key(&i, |&(c, _)| c)
                            .is_err()
                    })
                    .map(|(c, i)| (i, c))
                    .collect()
            })
            .collect();
        for (j, list) in new_per_point.into_iter().enumerate() {
            for (i, cost) in list {
                self.push_arc(j as u32, i, cost);
            }
        }
    }

    /// Greedy initial basis: each point in order sends to its attributed
    /// grain while that grain has remaining demand, else to the cheapest
    /// cluster with remaining demand. Exactly `n + k - 1` allocations,
    /// forming a spanning tree of the bipartite graph.
    fn build_initial_tree(&mut self, targets: &TargetWeights) {
        let n = self.n;
        let k = self.k;
        let mut remaining = targets.kappa().to_vec();
        let mut open = vec![true; k];
        let mut open_count = k;
        let mut allocations = 0usize;

        for j in 0..n {
            let mut supply = self.support.weight(j);
            let last_point = j + 1 == n;
            loop {
                let x = self.support.position(j);
                let preferred = self.support.grain(j) as usize - 1;
                let mut best = usize::MAX;
                let mut best_cost = f64::INFINITY;
                if preferred < k && open[preferred] && remaining[preferred] > 0.0 {
                    best = preferred;
                    best_cost = self.model.cost(preferred, x);
                } else {
                    for (i, &is_open) in open.iter().enumerate() {
                        if is_open {
                            let c = self.model.cost(i, x);
                            if c < best_cost {
                                best_cost = c;
                                best = i;
                            }
                        }
                    }
                }
                debug_assert_ne!(best, usize::MAX, "balanced problem has open demand");
                // The last point absorbs rounding drift on its last cluster.
                let amount = if last_point && open_count == 1 {
                    supply
                } else {
                    supply.min(remaining[best])
                };
                let arc = match self.arc_index(j as u32, best as u32) {
                    Some(a) => a,
                    None => self.push_arc(j as u32, best as u32, best_cost),
                };
                self.flow[arc as usize] += amount;
                if !self.in_tree[arc as usize] {
                    self.in_tree[arc as usize] = true;
                    allocations += 1;
                }
                supply -= amount;
                remaining[best] -= amount;

                if last_point {
                    open[best] = false;
                    open_count -= 1;
                    if open_count == 0 {
                        break;
                    }
                } else if supply > 0.0 {
                    open[best] = false;
                    open_count -= 1;
                } else {
                    break;
                }
            }
        }
        debug_assert_eq!(allocations, n + k - 1, "initial basis spans all nodes");
        self.rebuild_tree_arrays();
    }

    #[inline]
    fn cluster_node(&self, cluster: u32) -> u32 {
        self.n as u32 + cluster
    }

    #[inline]
    fn arc_other(&self, arc: u32, node: u32) -> u32 {
        let a = &self.arcs[arc as usize];
        if a.point == node {
            self.cluster_node(a.cluster)
        } else {
            a.point
        }
    }

    /// Rebuild parent/thread/size arrays and potentials from `in_tree`.
    fn rebuild_tree_arrays(&mut self) {
        let count = self.node_count();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); count];
        for (idx, a) in self.arcs.iter().enumerate() {
            if self.in_tree[idx] {
                adj[a.point as usize].push(idx as u32);
                adj[self.n + a.cluster as usize].push(idx as u32);
            }
        }
        let root = self.root();
        for v in self.parent.iter_mut() {
            *v = NONE;
        }
        for v in self.parent_arc.iter_mut() {
            *v = NONE;
        }

        let mut order: Vec<u32> = Vec::with_capacity(count);
        let mut stack: Vec<u32> = vec![root];
        let mut visited = vec![false; count];
        visited[root as usize] = true;
        while let Some(u) = stack.pop() {
            order.push(u);
            for &arc in adj[u as usize].iter().rev() {
                let v = self.arc_other(arc, u);
                if !visited[v as usize] {
                    visited[v as usize] = true;
                    self.parent[v as usize] = u;
                    self.parent_arc[v as usize] = arc;
                    stack.push(v);
                }
            }
        }
        debug_assert_eq!(order.len(), count, "tree arcs span all nodes");

        for w in 0..count {
            let u = order[w] as usize;
            let nxt = order[(w + 1) % count];
            self.next_dft[u] = nxt;
            self.prev_dft[nxt as usize] = order[w];
        }
        for v in self.size.iter_mut() {
            *v = 1;
        }
        for &u in order.iter().rev() {
            let p = self.parent[u as usize];
            if p != NONE {
                self.size[p as usize] += self.size[u as usize];
            }
        }
        // A subtree occupies a contiguous preorder run.
        let mut position = vec![0u32; count];
        for (w, &u) in order.iter().enumerate() {
            position[u as usize] = w as u32;
        }
        for &u in order.iter() {
            let end = position[u as usize] + self.size[u as usize] - 1;
            self.last_desc[u as usize] = order[end as usize];
        }

        self.recompute_potentials();
    }

    fn recompute_potentials(&mut self) {
        let root = self.root();
        self.potential[root as usize] = 0.0;
        let count = self.node_count();
        let mut u = self.next_dft[root as usize];
        for _ in 1..count {
            let p = self.parent[u as usize];
            let arc = &self.arcs[self.parent_arc[u as usize] as usize];
            self.potential[u as usize] = if arc.point == u {
                // eta_j = c + gamma_parent
                arc.cost + self.potential[p as usize]
            } else {
                // gamma_i = eta_parent - c
                self.potential[p as usize] - arc.cost
            };
            u = self.next_dft[u as usize];
        }
    }

    #[inline]
    fn reduced_cost(&self, arc: u32) -> f64 {
        let a = &self.arcs[arc as usize];
        a.cost - self.potential[a.point as usize]
            + self.potential[self.n + a.cluster as usize]
    }

    /// Entering arc by cyclic block pricing, or first-index under Bland.
    fn find_entering(&mut self, tol: f64) -> Option<u32> {
        let count = self.arcs.len();
        if self.bland {
            return (0..count as u32)
                .find(|&arc| !self.in_tree[arc as usize] && self.reduced_cost(arc) < -tol);
        }
        let block = (count as f64).sqrt().ceil() as usize;
        let blocks = count.div_ceil(block);
        for _ in 0..blocks {
            let start = self.block_start;
            let end = (start + block).min(count);
            let mut best = NONE;
            let mut best_rc = -tol;
            for arc in start as u32..end as u32 {
                if !self.in_tree[arc as usize] {
                    let rc = self.reduced_cost(arc);
                    if rc < best_rc {
                        best_rc = rc;
                        best = arc;
                    }
                }
            }
            self.block_start = if end >= count { 0 } else { end };
            if best != NONE {
                return Some(best);
            }
        }
        None
    }

    fn lca(&self, mut u: u32, mut v: u32) -> u32 {
        while u != v {
            if self.size[u as usize] <= self.size[v as usize] {
                u = self.parent[u as usize];
            } else {
                v = self.parent[v as usize];
            }
        }
        u
    }

    /// Cycle of the entering arc as `(arc, forward)`, in traversal order
    /// starting at the apex and following the entering arc's direction.
    /// `forward` arcs gain flow when the entering arc gains flow.
    fn trace_cycle(&self, entering: u32, buf: &mut Vec<(u32, bool)>) {
        buf.clear();
        let a = &self.arcs[entering as usize];
        let pu = a.point;
        let cv = self.cluster_node(a.cluster);
        let w = self.lca(pu, cv);
        // Apex -> pu segment: the cycle walks parent to child; collect
        // child-to-parent and reverse.
        let start = buf.len();
        let mut x = pu;
        while x != w {
            let arc = self.parent_arc[x as usize];
            buf.push((arc, self.arcs[arc as usize].point != x));
            x = self.parent[x as usize];
        }
        buf[start..].reverse();
        buf.push((entering, true));
        // cv -> apex segment: child to parent, in walk order.
        let mut x = cv;
        while x != w {
            let arc = self.parent_arc[x as usize];
            buf.push((arc, self.arcs[arc as usize].point == x));
            x = self.parent[x as usize];
        }
    }

    fn in_subtree(&self, mut node: u32, subtree_root: u32) -> bool {
        let root_size = self.size[subtree_root as usize];
        loop {
            if node == subtree_root {
                return true;
            }
            if node == NONE || self.size[node as usize] >= root_size {
                return false;
            }
            node = self.parent[node as usize];
        }
    }

    fn pivot(&mut self, entering: u32, cycle: &mut Vec<(u32, bool)>) {
        self.trace_cycle(entering, cycle);
        // Among ties, the last blocking arc in cycle order keeps degenerate
        // pivots from cascading (Cunningham's rule).
        let mut t = f64::INFINITY;
        let mut leaving = NONE;
        for &(arc, forward) in cycle.iter() {
            if !forward {
                let f = self.flow[arc as usize];
                if f <= t {
                    t = f;
                    leaving = arc;
                }
            }
        }
        debug_assert_ne!(leaving, NONE, "transportation cycles alternate direction");
        debug_assert_ne!(leaving, entering);

        if t > 0.0 {
            for &(arc, forward) in cycle.iter() {
                if forward {
                    self.flow[arc as usize] += t;
                } else {
                    self.flow[arc as usize] -= t;
                }
            }
        }
        self.flow[leaving as usize] = 0.0;

        self.in_tree[leaving as usize] = false;
        self.in_tree[entering as usize] = true;

        // Child endpoint of the leaving arc.
        let la = self.arcs[leaving as usize];
        let (lp, lc) = (la.point, self.cluster_node(la.cluster));
        let child = if self.parent_arc[lp as usize] == leaving {
            lp
        } else {
            debug_assert_eq!(self.parent_arc[lc as usize], leaving);
            lc
        };
        let grand = self.parent[child as usize];

        // Entering endpoint inside the detached subtree becomes its root.
        let ea = self.arcs[entering as usize];
        let (ep, ec) = (ea.point, self.cluster_node(ea.cluster));
        let (u, v) = if self.in_subtree(ep, child) {
            (ec, ep)
        } else {
            (ep, ec)
        };

        self.remove_edge(grand, child);
        self.make_root(v);
        self.add_edge(entering, u, v);
        self.update_potentials(entering, u, v);
        self.note_step(t);
    }

    fn note_step(&mut self, t: f64) {
        if t <= 0.0 {
            self.stall += 1;
            if self.stall >= STALL_LIMIT {
                self.bland = true;
            }
        } else {
            self.stall = 0;
            self.bland = false;
        }
    }

    /// Detach the subtree rooted at `child` from its parent `s`.
    fn remove_edge(&mut self, s: u32, child: u32) {
        let size_c = self.size[child as usize];
        let prev_c = self.prev_dft[child as usize];
        let last_c = self.last_desc[child as usize];
        let next_last_c = self.next_dft[last_c as usize];
        self.parent[child as usize] = NONE;
        self.parent_arc[child as usize] = NONE;
        self.next_dft[prev_c as usize] = next_last_c;
        self.prev_dft[next_last_c as usize] = prev_c;
        self.next_dft[last_c as usize] = child;
        self.prev_dft[child as usize] = last_c;
        let mut u = s;
        while u != NONE {
            self.size[u as usize] -= size_c;
            if self.last_desc[u as usize] == last_c {
                self.last_desc[u as usize] = prev_c;
            }
            u = self.parent[u as usize];
        }
    }

    /// Reroot the detached subtree at `v` by reversing its parent chain.
    fn make_root(&mut self, v: u32) {
        let mut ancestors = Vec::new();
        let mut u = v;
        while u != NONE {
            ancestors.push(u);
            u = self.parent[u as usize];
        }
        ancestors.reverse();
        for w in 0..ancestors.len().saturating_sub(1) {
            let p = ancestors[w];
            let q = ancestors[w + 1];
            let size_p = self.size[p as usize];
            let mut last_p = self.last_desc[p as usize];
            let prev_q = self.prev_dft[q as usize];
            let last_q = self.last_desc[q as usize];
            let next_last_q = self.next_dft[last_q as usize];
            // Make p a child of q.
            self.parent[p as usize] = q;
            self.parent[q as usize] = NONE;
            self.parent_arc[p as usize] = self.parent_arc[q as usize];
            self.parent_arc[q as usize] = NONE;
            self.size[p as usize] = size_p - self.size[q as usize];
            self.size[q as usize] = size_p;
            // Cut q's subtree out of the thread.
            self.next_dft[prev_q as usize] = next_last_q;
            self.prev_dft[next_last_q as usize] = prev_q;
            self.next_dft[last_q as usize] = q;
            self.prev_dft[q as usize] = last_q;
            if last_p == last_q {
                self.last_desc[p as usize] = prev_q;
                last_p = prev_q;
            }
            // Re-attach p's remainder under q.
            self.prev_dft[p as usize] = last_q;
            self.next_dft[last_q as usize] = p;
            self.next_dft[last_p as usize] = q;
            self.prev_dft[q as usize] = last_p;
            self.last_desc[q as usize] = last_p;
        }
    }

    /// Attach the subtree rooted at `v` as a child of `u` via `arc`.
    fn add_edge(&mut self, arc: u32, u: u32, v: u32) {
        let last_u = self.last_desc[u as usize];
        let next_last_u = self.next_dft[last_u as usize];
        let size_v = self.size[v as usize];
        let last_v = self.last_desc[v as usize];
        self.parent[v as usize] = u;
        self.parent_arc[v as usize] = arc;
        self.next_dft[last_u as usize] = v;
        self.prev_dft[v as usize] = last_u;
        self.prev_dft[next_last_u as usize] = last_v;
        self.next_dft[last_v as usize] = next_last_u;
        let mut w = u;
        while w != NONE {
            self.size[w as usize] += size_v;
            if self.last_desc[w as usize] == last_u {
                self.last_desc[w as usize] = last_v;
            }
            w = self.parent[w as usize];
        }
    }

    /// Shift the re-hung subtree's potentials so the entering arc is tight.
    fn update_potentials(&mut self, arc: u32, u: u32, v: u32) {
        let a = &self.arcs[arc as usize];
        let target = if a.point == v {
            a.cost + self.potential[u as usize]
        } else {
            self.potential[u as usize] - a.cost
        };
        let delta = target - self.potential[v as usize];
        if delta == 0.0 {
            return;
        }
        let last = self.last_desc[v as usize];
        let mut x = v;
        loop {
            self.potential[x as usize] += delta;
            if x == last {
                break;
            }
            x = self.next_dft[x as usize];
        }
    }

    /// Dual-feasibility violations over the full bipartite arc set:
    /// per-point violated clusters, most violated first, capped.
    fn certificate_violations(&self, tol: f64, cap: usize) -> Vec<(u32, Vec<u32>)> {
        let model = self.model;
        let support = self.support;
        let k = self.k;
        let potential = &self.potential;
        let n = self.n;
        (0..n)
            .into_par_iter()
            .filter_map(|j| {
                let x = support.position(j);
                let eta = potential[j];
                let mut violated: Vec<(f64, u32)> = Vec::new();
                for i in 0..k {
                    let slack = model.cost(i, x) + potential[n + i] - eta;
                    if slack < -tol {
                        violated.push((slack, i as u32));
                    }
                }
                if violated.is_empty() {
                    None
                } else {
                    violated.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    Some((
                        j as u32,
                        violated.into_iter().take(cap).map(|(_, i)| i).collect(),
                    ))
                }
            })
            .collect()
    }

    fn objective(&self) -> f64 {
        self.arcs
            .iter()
            .zip(&self.flow)
            .map(|(a, f)| a.cost * f)
            .sum()
    }
}

/// Solve the weight-constrained assignment LP on a support.
///
/// `candidates_per_point` is the initial per-point arc budget; it doubles on
/// every certification failure until dual feasibility holds on all `n * k`
/// arcs.
pub fn solve_wcaa(
    support: &ImageSupport,
    model: &SiteModel,
    targets: &TargetWeights,
    candidates_per_point: usize,
) -> Result<WcaaSolution, TransportError> {
    if model.k() != targets.k() {
        return Err(TransportError::SizeMismatch {
            model: model.k(),
            targets: targets.k(),
        });
    }
    let mut solver = Solver::new(support, model, targets, candidates_per_point)?;
    let n = solver.n;
    let k = solver.k;
    let pivot_cap = 400 * (n + k) + 100_000;
    let tol = 1e-10 * solver.cost_scale;

    let mut pivots = 0usize;
    let mut escalations = 0usize;
    let mut m = candidates_per_point.min(k);
    let mut cycle_buf: Vec<(u32, bool)> = Vec::new();

    loop {
        while let Some(entering) = solver.find_entering(tol) {
            solver.pivot(entering, &mut cycle_buf);
            pivots += 1;
            if pivots > pivot_cap {
                return Err(TransportError::PivotLimit(pivot_cap));
            }
        }
        // Incremental potential updates accumulate error; refresh before
        // certifying.
        solver.recompute_potentials();

        let violations = solver.certificate_violations(tol, m.max(1));
        if violations.is_empty() {
            break;
        }
        escalations += 1;
        m = (m * 2).min(k);
        for (j, clusters) in violations {
            for i in clusters {
                if solver.arc_index(j, i).is_none() {
                    let cost = solver
                        .model
                        .cost(i as usize, solver.support.position(j as usize));
                    solver.push_arc(j, i, cost);
                }
            }
        }
        solver.add_candidate_arcs(m);
        solver.block_start = 0;
    }

    // Positive flows only; degenerate tree arcs are dropped.
    let weight_tol = 1e-12 * support.total_weight().max(1.0);
    let mut entries: Vec<(u32, u32, f64)> = solver
        .arcs
        .iter()
        .zip(&solver.flow)
        .filter(|(_, &f)| f > weight_tol)
        .map(|(a, &f)| (a.cluster, a.point, f / support.weight(a.point as usize)))
        .collect();
    entries.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));

    // Tree duals depend on which degenerate arcs ended up basic; replace
    // them by the component-wise minimal optimal duals, which are unique.
    let (eta, gamma) = canonical_duals(support, model, &entries);

    let objective = solver.objective();
    let dual_objective = eta
        .iter()
        .enumerate()
        .map(|(j, &e)| support.weight(j) * e)
        .sum::<f64>()
        - gamma
            .iter()
            .zip(targets.kappa())
            .map(|(g, kap)| g * kap)
            .sum::<f64>();

    Ok(WcaaSolution {
        clustering: Clustering { entries },
        duals: DualSolution { eta, gamma },
        report: SolveReport {
            objective,
            dual_objective,
            pivots,
            escalations,
            final_candidates_per_point: m,
            arcs: solver.arcs.len(),
        },
    })
}

/// The component-wise minimal optimal dual for a fixed optimal assignment.
///
/// Complementary slackness pins `eta_j = c_ij + gamma_i` on every positive
/// arc, and feasibility needs `eta_j <= c_lj + gamma_l` for every other
/// cluster, i.e. `gamma_l >= gamma_i + (c_ij - c_lj)`. The smallest
/// nonnegative solution of these difference constraints is the longest-path
/// fixpoint over the cluster graph whose edge `i -> l` carries the largest
/// such bound; it exists because the solved duals are a feasible solution.
fn canonical_duals(
    support: &ImageSupport,
    model: &SiteModel,
    entries: &[(u32, u32, f64)],
) -> (Vec<f64>, Vec<f64>) {
    let k = model.k();
    let n = support.len();
    let mut bound = vec![f64::NEG_INFINITY; k * k];
    for &(i, j, _) in entries {
        let x = support.position(j as usize);
        let ci = model.cost(i as usize, x);
        for l in 0..k {
            if l != i as usize {
                let w = ci - model.cost(l, x);
                let slot = &mut bound[i as usize * k + l];
                if w > *slot {
                    *slot = w;
                }
            }
        }
    }
    // Longest paths from an implicit zero source (Bellman-Ford).
    let mut gamma = vec![0.0f64; k];
    for _ in 0..k {
        let mut changed = false;
        for i in 0..k {
            let gi = gamma[i];
            for l in 0..k {
                let w = bound[i * k + l];
                if w > f64::NEG_INFINITY && gi + w > gamma[l] + 1e-12 {
                    gamma[l] = gi + w;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let shift = gamma.iter().copied().fold(f64::INFINITY, f64::min);
    for g in gamma.iter_mut() {
        *g -= shift;
    }
    let eta: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let x = support.position(j);
            (0..k)
                .map(|i| model.cost(i, x) + gamma[i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    (eta, gamma)
}

/// Diagram parameters from the model shapes/sites and the dual sizes.
pub fn diagram_from_duals(
    model: &SiteModel,
    duals: &DualSolution,
) -> Result<DiagramParams, DiagramError> {
    DiagramParams::new(
        model.shapes.clone(),
        model.sites.clone(),
        duals.gamma.clone(),
    )
}

/// Complementary slackness and dual feasibility residuals:
/// `max |eta_j - c_ij - gamma_i|` over positive assignments, and
/// `max(0, eta_j - c_ij - gamma_i)` over all pairs.
pub fn check_complementary_slackness(
    support: &ImageSupport,
    model: &SiteModel,
    clustering: &Clustering,
    duals: &DualSolution,
) -> (f64, f64) {
    let cs = clustering
        .entries
        .iter()
        .map(|&(i, j, _)| {
            let c = model.cost(i as usize, support.position(j as usize));
            (duals.eta[j as usize] - c - duals.gamma[i as usize]).abs()
        })
        .fold(0.0f64, f64::max);
    let k = model.k();
    let infeas = (0..support.len())
        .into_par_iter()
        .map(|j| {
            let x = support.position(j);
            let mut worst = 0.0f64;
            for i in 0..k {
                worst = worst.max(duals.eta[j] - model.cost(i, x) - duals.gamma[i]);
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    (cs, infeas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::compute_boundary_distance;
    use crate::support::full_support;
    use crate::volume::GrainScan;

    fn two_point_support() -> ImageSupport {
        // Voxel centers at x = 0.5 and 1.5.
        let scan = GrainScan::new((2, 1, 1), (1.0, 1.0, 1.0), vec![1, 2], 2).unwrap();
        let field = compute_boundary_distance(&scan);
        full_support(&scan, &field)
    }

    fn voronoi_model_1d(xs: &[f64]) -> SiteModel {
        SiteModel {
            shapes: vec![Mat3::identity(); xs.len()],
            sites: xs.iter().map(|&x| Vec3::new(x, 0.5, 0.5)).collect(),
        }
    }

    #[test]
    fn identity_assignment_zero_cost() {
        let support = two_point_support();
        let model = voronoi_model_1d(&[0.5, 1.5]);
        let targets = TargetWeights::new(vec![1.0, 1.0], support.total_weight()).unwrap();
        let sol = solve_wcaa(&support, &model, &targets, 2).unwrap();
        assert!(sol.report.objective.abs() < 1e-12);
        assert_eq!(sol.clustering.entries.len(), 2);
        for &(i, j, xi) in &sol.clustering.entries {
            assert_eq!(i, j);
            assert!((xi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unbalanced_targets_split_a_point() {
        let support = two_point_support();
        let model = voronoi_model_1d(&[0.5, 1.5]);
        let targets = TargetWeights::new(vec![1.5, 0.5], support.total_weight()).unwrap();
        let sol = solve_wcaa(&support, &model, &targets, 2).unwrap();
        // The point at 1.5 splits 0.5 / 0.5; objective 0.5 * 1^2.
        assert!((sol.report.objective - 0.5).abs() < 1e-9);
        let split: Vec<_> = sol
            .clustering
            .entries
            .iter()
            .filter(|&&(_, j, _)| j == 1)
            .collect();
        assert_eq!(split.len(), 2);
        for &&(_, _, xi) in &split {
            assert!((xi - 0.5).abs() < 1e-9);
        }
        assert_eq!(sol.clustering.fractional_point_count(), 1);
    }

    #[test]
    fn rejects_bad_targets() {
        assert!(TargetWeights::new(vec![1.0, 0.0], 2.0).is_err());
        let support = two_point_support();
        let model = voronoi_model_1d(&[0.5, 1.5]);
        let targets = TargetWeights::new(vec![1.0], support.total_weight()).unwrap();
        assert!(matches!(
            solve_wcaa(&support, &model, &targets, 2),
            Err(TransportError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn symmetric_instance_equal_gammas() {
        let support = two_point_support();
        let model = voronoi_model_1d(&[0.5, 1.5]);
        let targets = TargetWeights::new(vec![1.0, 1.0], support.total_weight()).unwrap();
        let sol = solve_wcaa(&support, &model, &targets, 2).unwrap();
        assert!(sol.duals.gamma[0].abs() < 1e-12);
        assert!(sol.duals.gamma[1].abs() < 1e-12);
    }

    #[test]
    fn strong_duality_and_cs_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for case in 0..10 {
            let nx = rng.random_range(3..7usize);
            let k = rng.random_range(2..4usize);
            let labels: Vec<u32> = (0..nx * nx).map(|i| (i % k) as u32 + 1).collect();
            let scan = GrainScan::new((nx, nx, 1), (1.0, 1.0, 1.0), labels, k as u32).unwrap();
            let field = compute_boundary_distance(&scan);
            let support = full_support(&scan, &field);
            let model = SiteModel {
                shapes: (0..k)
                    .map(|_| Mat3::identity() * rng.random_range(0.5..2.0))
                    .collect(),
                sites: (0..k)
                    .map(|_| {
                        Vec3::new(
                            rng.random_range(0.0..nx as f64),
                            rng.random_range(0.0..nx as f64),
                            0.5,
                        )
                    })
                    .collect(),
            };
            let kappa: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..4.0)).collect();
            let targets = TargetWeights::new(kappa, support.total_weight()).unwrap();
            let sol = solve_wcaa(&support, &model, &targets, 1).unwrap();

            let gap = (sol.report.objective - sol.report.dual_objective).abs();
            assert!(
                gap <= 1e-6 * sol.report.objective.abs().max(1.0),
                "case {case}: gap {gap}"
            );
            let (cs, infeas) =
                check_complementary_slackness(&support, &model, &sol.clustering, &sol.duals);
            assert!(cs < 1e-6, "case {case}: cs {cs}");
            assert!(infeas < 1e-6, "case {case}: infeas {infeas}");

            // Assignment conditions.
            let mut per_point = vec![0.0; support.len()];
            let mut per_cluster = vec![0.0; k];
            for &(i, j, xi) in &sol.clustering.entries {
                per_point[j as usize] += xi;
                per_cluster[i as usize] += xi * support.weight(j as usize);
            }
            for (j, &s) in per_point.iter().enumerate() {
                assert!((s - 1.0).abs() < 1e-9, "case {case} point {j}: {s}");
            }
            for (i, &s) in per_cluster.iter().enumerate() {
                let want = targets.kappa()[i];
                assert!(
                    (s - want).abs() < 1e-9 * want.max(1.0),
                    "case {case} cluster {i}: {s} vs {want}"
                );
            }
            assert!(sol.clustering.fractional_point_count() <= k - 1);
        }
    }

    #[test]
    fn matches_exhaustive_enumeration_on_integer_instance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for case in 0..8 {
            // 6 unit-weight points on a line, 3 clusters, counts (2,2,2).
            let scan =
                GrainScan::new((6, 1, 1), (1.0, 1.0, 1.0), vec![1, 1, 2, 2, 3, 3], 3).unwrap();
            let field = compute_boundary_distance(&scan);
            let support = full_support(&scan, &field);
            let model = SiteModel {
                shapes: vec![Mat3::identity(); 3],
                sites: (0..3)
                    .map(|_| Vec3::new(rng.random_range(0.0..6.0), 0.5, 0.5))
                    .collect(),
            };
            let targets =
                TargetWeights::new(vec![2.0, 2.0, 2.0], support.total_weight()).unwrap();
            let sol = solve_wcaa(&support, &model, &targets, 1).unwrap();

            // Integral optimum exists; brute force all 3^6 assignments.
            let mut best = f64::INFINITY;
            for assign in 0..3usize.pow(6) {
                let mut counts = [0; 3];
                let mut cost = 0.0;
                let mut a = assign;
                for j in 0..6 {
                    let i = a % 3;
                    a /= 3;
                    counts[i] += 1;
                    cost += model.cost(i, support.position(j));
                }
                if counts == [2, 2, 2] {
                    best = best.min(cost);
                }
            }
            assert!(
                (sol.report.objective - best).abs() <= 1e-9 * best.max(1.0),
                "case {case}: lp {} vs brute {best}",
                sol.report.objective
            );
        }
    }

    #[test]
    fn perturbed_gamma_reports_infeasibility() {
        let support = two_point_support();
        let model = voronoi_model_1d(&[0.5, 1.5]);
        let targets = TargetWeights::new(vec![1.0, 1.0], support.total_weight()).unwrap();
        let sol = solve_wcaa(&support, &model, &targets, 2).unwrap();
        let mut duals = sol.duals.clone();
        duals.gamma[1] -= 1.0;
        let (_, infeas) =
            check_complementary_slackness(&support, &model, &sol.clustering, &duals);
        assert!((infeas - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_cost_instance_zero_residual() {
        // Both points exactly at their sites.
        let support = two_point_support();
        let model = voronoi_model_1d(&[0.5, 1.5]);
        let targets = TargetWeights::new(vec![1.0, 1.0], support.total_weight()).unwrap();
        let sol = solve_wcaa(&support, &model, &targets, 2).unwrap();
        let (cs, _) =
            check_complementary_slackness(&support, &model, &sol.clustering, &sol.duals);
        assert_eq!(cs, 0.0);
    }

    #[test]
    fn deterministic_across_runs() {
        let support = two_point_support();
        let model = voronoi_model_1d(&[0.3, 1.2]);
        let targets = TargetWeights::new(vec![1.3, 0.7], support.total_weight()).unwrap();
        let a = solve_wcaa(&support, &model, &targets, 1).unwrap();
        let b = solve_wcaa(&support, &model, &targets, 1).unwrap();
        assert_eq!(a.report.objective, b.report.objective);
        assert_eq!(a.clustering.entries, b.clustering.entries);
    }
}
