//! Coverage constraints on the marginal probabilities `p_i` that replace the
//! per-resource allocation grid.
//!
//! For a set of resources `L`, the targets that only resources in `L` can audit
//! receive at most `|L|` units of coverage in total. Enumerating every `L`
//! is exponential in `k`; [`constraint_find`] instead merges targets with the
//! same audit set and walks the connected induced subgraphs of the resulting
//! intersection graph.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::lp::{implies, Constraint, LpError};
use crate::model::{audit_sets, AuditGame};

/// Largest `k` accepted by [`extract_constraints_naive`].
pub const DEFAULT_RESOURCE_CAP: usize = 22;
/// Default limit on enumerated subgraphs.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("naive extraction needs 2^{k} subsets; cap is k <= {cap}")]
    ResourceCapExceeded { k: usize, cap: usize },
    #[error("more than {count} connected subgraphs; enumeration aborted")]
    EnumerationCapExceeded { count: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    /// Produced by the resource subset `resources`.
    Naive { resources: Vec<usize> },
    /// Produced by a connected set of merged target classes.
    Merged { classes: Vec<usize> },
}

/// `sum_{i in targets} p_i <= bound`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverageConstraint {
    pub targets: Vec<usize>,
    pub bound: usize,
    #[serde(skip)]
    pub source: ConstraintSource,
}

impl CoverageConstraint {
    pub fn to_lp(&self, n: usize) -> Constraint {
        let mut coeffs = vec![0.0; n];
        for &i in &self.targets {
            coeffs[i] = 1.0;
        }
        Constraint::le(coeffs, self.bound as f64)
    }

    pub fn lhs(&self, p: &[f64]) -> f64 {
        self.targets.iter().map(|&i| p[i]).sum()
    }
}

/// A set of coverage constraints together with the unit box and the targets
/// whose coverage is pinned to zero because no resource can audit them.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    n_targets: usize,
    constraints: Vec<CoverageConstraint>,
    pinned_zero: Vec<usize>,
    seen: HashSet<(Vec<usize>, usize)>,
}

impl ConstraintSet {
    pub fn new(n_targets: usize, pinned_zero: Vec<usize>) -> Self {
        Self { n_targets, constraints: Vec::new(), pinned_zero, seen: HashSet::new() }
    }

    /// Adds a constraint unless an identical (targets, bound) pair is present.
    /// Returns whether it was added.
    pub fn insert(&mut self, mut c: CoverageConstraint) -> bool {
        c.targets.sort_unstable();
        c.targets.dedup();
        if !self.seen.insert((c.targets.clone(), c.bound)) {
            return false;
        }
        self.constraints.push(c);
        true
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn constraints(&self) -> &[CoverageConstraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn pinned_zero(&self) -> &[usize] {
        &self.pinned_zero
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.pinned_zero.contains(&i)
    }

    /// LP rows for the coverage constraints and the pinned targets. The unit
    /// box is left to variable bounds.
    pub fn lp_rows(&self) -> Vec<Constraint> {
        let n = self.n_targets;
        let mut rows: Vec<Constraint> = self.constraints.iter().map(|c| c.to_lp(n)).collect();
        for &i in &self.pinned_zero {
            let mut coeffs = vec![0.0; n];
            coeffs[i] = 1.0;
            rows.push(Constraint::le(coeffs, 0.0));
        }
        rows
    }

    /// Membership in the polytope (constraints, box and pinned zeros).
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
            && self.pinned_zero.iter().all(|&i| p[i] <= tol)
            && self.constraints.iter().all(|c| c.lhs(p) <= c.bound as f64 + tol)
    }

    /// Largest violation of the polytope at `p`.
    pub fn max_violation(&self, p: &[f64]) -> f64 {
        let boxes = p.iter().map(|&v| (-v).max(v - 1.0)).fold(0.0, f64::max);
        let pins = self.pinned_zero.iter().map(|&i| p[i]).fold(0.0, f64::max);
        let rows = self.constraints.iter().map(|c| c.lhs(p) - c.bound as f64).fold(0.0, f64::max);
        boxes.max(pins).max(rows)
    }

    /// Drops every constraint implied by the remaining ones (checked by LP).
    pub fn prune_redundant(&mut self) -> Result<usize, LpError> {
        let n = self.n_targets;
        let mut keep = vec![true; self.constraints.len()];
        let pins: Vec<Constraint> = self
            .pinned_zero
            .iter()
            .map(|&i| {
                let mut c = vec![0.0; n];
                c[i] = 1.0;
                Constraint::le(c, 0.0)
            })
            .collect();
        for idx in 0..self.constraints.len() {
            let others: Vec<Constraint> = self
                .constraints
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != idx && keep[j])
                .map(|(_, c)| c.to_lp(n))
                .chain(pins.iter().cloned())
                .collect();
            if implies(&others, &self.constraints[idx].to_lp(n))? {
                keep[idx] = false;
            }
        }
        let removed = keep.iter().filter(|k| !**k).count();
        let mut it = keep.iter();
        self.constraints.retain(|_| *it.next().unwrap());
        self.seen = self.constraints.iter().map(|c| (c.targets.clone(), c.bound)).collect();
        Ok(removed)
    }
}

fn target_masks(game: &AuditGame) -> Vec<u64> {
    let f = audit_sets(game);
    f.iter().map(|s| s.iter().fold(0u64, |m, &j| m | (1u64 << j))).collect()
}

/// Targets auditable only by resources in `l` (and by at least one resource).
pub fn only_audited_by(game: &AuditGame, l: &[usize]) -> Vec<usize> {
    let f = audit_sets(game);
    (0..game.n_targets())
        .filter(|&i| {
            let s = f.of(i);
            !s.is_empty() && s.iter().all(|j| l.contains(j))
        })
        .collect()
}

/// Enumerates every resource subset `L`, adding `sum_{OnlyAuditedBy(L)} p <= |L|`
/// whenever it is not vacuous.
pub fn extract_constraints_naive(game: &AuditGame, resource_cap: usize) -> Result<ConstraintSet, ExtractError> {
    let k = game.n_resources();
    if k > resource_cap || k >= 64 {
        return Err(ExtractError::ResourceCapExceeded { k, cap: resource_cap.min(63) });
    }
    let masks = target_masks(game);
    let mut set = ConstraintSet::new(game.n_targets(), game.unauditable_targets());
    for l in 1u64..(1u64 << k) {
        let bound = l.count_ones() as usize;
        let m: Vec<usize> = masks
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f != 0 && f & !l == 0)
            .map(|(i, _)| i)
            .collect();
        if m.len() > bound {
            let resources = (0..k).filter(|&j| l >> j & 1 == 1).collect();
            set.insert(CoverageConstraint { targets: m, bound, source: ConstraintSource::Naive { resources } });
        }
    }
    Ok(set)
}

/// Targets sharing one audit set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TargetClass {
    pub audit_set: Vec<usize>,
    pub members: Vec<usize>,
}

impl TargetClass {
    pub fn weight(&self) -> usize {
        self.members.len()
    }
}

/// Auditable targets grouped by audit set, in order of first member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergedTargets {
    pub classes: Vec<TargetClass>,
}

pub fn merge_targets(game: &AuditGame) -> MergedTargets {
    let f = audit_sets(game);
    let mut classes: Vec<TargetClass> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for i in 0..game.n_targets() {
        let s = f.of(i);
        if s.is_empty() {
            continue;
        }
        let c = *index.entry(s.to_vec()).or_insert_with(|| {
            classes.push(TargetClass { audit_set: s.to_vec(), members: Vec::new() });
            classes.len() - 1
        });
        classes[c].members.push(i);
    }
    MergedTargets { classes }
}

/// Simple undirected graph with sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntersectionGraph {
    adj: Vec<Vec<usize>>,
}

impl IntersectionGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Self { adj }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }
}

/// Nodes are merged classes; an edge joins classes whose audit sets intersect.
pub fn build_intersection_graph(merged: &MergedTargets) -> IntersectionGraph {
    let c = &merged.classes;
    let mut edges = Vec::new();
    for u in 0..c.len() {
        for v in u + 1..c.len() {
            if c[u].audit_set.iter().any(|j| c[v].audit_set.binary_search(j).is_ok()) {
                edges.push((u, v));
            }
        }
    }
    IntersectionGraph::from_edges(c.len(), &edges)
}

struct Esu<'a, F> {
    g: &'a IntersectionGraph,
    // Number of current-subgraph vertices equal or adjacent to each vertex.
    covered: Vec<u32>,
    sub: Vec<usize>,
    count: usize,
    cap: usize,
    visit: F,
}

impl<F: FnMut(&[usize])> Esu<'_, F> {
    fn add(&mut self, v: usize) {
        self.sub.push(v);
        self.covered[v] += 1;
        for &u in self.g.neighbors(v) {
            self.covered[u] += 1;
        }
    }

    fn remove(&mut self, v: usize) {
        self.sub.pop();
        self.covered[v] -= 1;
        for &u in self.g.neighbors(v) {
            self.covered[u] -= 1;
        }
    }

    fn extend(&mut self, mut ext: Vec<usize>, anchor: usize) -> Result<(), ExtractError> {
        self.count += 1;
        if self.count > self.cap {
            return Err(ExtractError::EnumerationCapExceeded { count: self.cap });
        }
        (self.visit)(&self.sub);
        while let Some(w) = ext.pop() {
            // Exclusive neighbours of w: not in, nor adjacent to, the current subgraph.
            let mut next = ext.clone();
            for &u in self.g.neighbors(w) {
                if u > anchor && self.covered[u] == 0 {
                    next.push(u);
                }
            }
            self.add(w);
            self.extend(next, anchor)?;
            self.remove(w);
        }
        Ok(())
    }
}

/// Calls `visit` once for every nonempty vertex set inducing a connected
/// subgraph. Each set is grown from its smallest vertex, admitting only
/// larger vertices. Returns the number of sets visited.
pub fn for_each_connected_subgraph<F: FnMut(&[usize])>(
    g: &IntersectionGraph,
    cap: usize,
    visit: F,
) -> Result<usize, ExtractError> {
    let mut esu = Esu { g, covered: vec![0; g.n_nodes()], sub: Vec::new(), count: 0, cap, visit };
    for v in 0..g.n_nodes() {
        esu.add(v);
        let ext: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| u > v).collect();
        esu.extend(ext, v)?;
        esu.remove(v);
    }
    Ok(esu.count)
}

/// Collects every connected induced subgraph (vertex sets sorted ascending).
pub fn enumerate_connected_subgraphs(g: &IntersectionGraph, cap: usize) -> Result<Vec<Vec<usize>>, ExtractError> {
    let mut out = Vec::new();
    for_each_connected_subgraph(g, cap, |s| {
        let mut s = s.to_vec();
        s.sort_unstable();
        out.push(s);
    })?;
    Ok(out)
}

/// Coverage constraints from connected sets of merged target classes. Each
/// set contributes `sum p <= |union of audit sets|` over all its members.
pub fn constraint_find(game: &AuditGame, cap: usize) -> Result<ConstraintSet, ExtractError> {
    let merged = merge_targets(game);
    let g = build_intersection_graph(&merged);
    let mut set = ConstraintSet::new(game.n_targets(), game.unauditable_targets());
    let mut resources = vec![false; game.n_resources()];
    for_each_connected_subgraph(&g, cap, |nodes| {
        resources.iter_mut().for_each(|r| *r = false);
        let mut targets = Vec::new();
        for &v in nodes {
            let c = &merged.classes[v];
            targets.extend_from_slice(&c.members);
            for &j in &c.audit_set {
                resources[j] = true;
            }
        }
        let bound = resources.iter().filter(|r| **r).count();
        if targets.len() > bound {
            let mut classes = nodes.to_vec();
            classes.sort_unstable();
            set.insert(CoverageConstraint { targets, bound, source: ConstraintSource::Merged { classes } });
        }
    })?;
    Ok(set)
}

/// Thresholds for the two sufficient conditions of [`tractability_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TractabilityThresholds {
    /// Condition one holds when `nodes <= log2(n_targets) + extra_nodes`.
    pub extra_nodes: f64,
    pub max_degree: usize,
    pub max_high_degree_nodes: usize,
}

impl Default for TractabilityThresholds {
    fn default() -> Self {
        Self { extra_nodes: 4.0, max_degree: 4, max_high_degree_nodes: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TractabilityReport {
    pub nodes: usize,
    pub edges: usize,
    pub max_degree: usize,
    /// Nodes with degree at least 3.
    pub high_degree_nodes: usize,
    /// log2 of `2^((2(d+1))^(t+1)) * N^((d+1)^(t+1))` with `N` the node count.
    pub log2_subgraph_bound: f64,
    /// The bound itself when it fits in an `f64`.
    pub subgraph_bound: Option<f64>,
    pub few_nodes: bool,
    pub bounded_degree: bool,
}

impl TractabilityReport {
    pub fn tractable(&self) -> bool {
        self.few_nodes || self.bounded_degree
    }
}

/// Upper bound (log2) on the number of connected induced subgraphs of a graph
/// with `nodes` vertices, maximum degree `d` and `t` vertices of degree >= 3.
pub fn log2_subgraph_bound(nodes: usize, d: usize, t: usize) -> f64 {
    let e = (t + 1) as f64;
    let d1 = (d + 1) as f64;
    (2.0 * d1).powf(e) + d1.powf(e) * (nodes.max(1) as f64).log2()
}

pub fn tractability_check(g: &IntersectionGraph, n_targets: usize, th: &TractabilityThresholds) -> TractabilityReport {
    let nodes = g.n_nodes();
    let max_degree = (0..nodes).map(|v| g.degree(v)).max().unwrap_or(0);
    let high = (0..nodes).filter(|&v| g.degree(v) >= 3).count();
    let lb = log2_subgraph_bound(nodes, max_degree, high);
    TractabilityReport {
        nodes,
        edges: g.n_edges(),
        max_degree,
        high_degree_nodes: high,
        log2_subgraph_bound: lb,
        subgraph_bound: (lb < 1023.0).then(|| lb.exp2()),
        few_nodes: (nodes as f64) <= (n_targets.max(1) as f64).log2() + th.extra_nodes,
        bounded_degree: max_degree <= th.max_degree && high <= th.max_high_degree_nodes,
    }
}

/// True when the two sets (each with the unit box and pinned zeros) describe
/// the same polytope over `n` coordinates.
pub fn polytopes_equivalent(a: &ConstraintSet, b: &ConstraintSet, n: usize) -> Result<bool, LpError> {
    debug_assert_eq!(a.n_targets(), n);
    debug_assert_eq!(b.n_targets(), n);
    let ra = a.lp_rows();
    let rb = b.lp_rows();
    for c in &ra {
        if !implies(&rb, c)? {
            return Ok(false);
        }
    }
    for c in &rb {
        if !implies(&ra, c)? {
            return Ok(false);
        }
    }
    Ok(true)
}
