//! From coverage marginals to executable audit plans: lift `p` to a
//! resource-by-target allocation, then split that allocation into a convex
//! combination of pure assignments (Birkhoff-von Neumann).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, Constraint, LinearProgram, LpError, LpStatus};
use crate::model::AuditGame;

/// Entries below this are treated as zero during decomposition.
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Decomposition stops once the residual mass drops below this.
pub const RESIDUAL_TOL: f64 = 1e-9;
const LIFT_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("coverage cannot be realized by any allocation (deficit {deficit:e})")]
    Infeasible { deficit: f64 },
    #[error("decomposition residual {residual:e} exceeds tolerance")]
    NumericalResidual { residual: f64 },
    #[error("coverage vector has {found} entries, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid allocation matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// `entries[j][i]`: probability that resource `j` audits target `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationMatrix {
    pub entries: Vec<Vec<f64>>,
}

impl AllocationMatrix {
    pub fn zeros(k: usize, n: usize) -> Self {
        Self { entries: vec![vec![0.0; n]; k] }
    }

    pub fn n_resources(&self) -> usize {
        self.entries.len()
    }

    pub fn n_targets(&self) -> usize {
        self.entries.first().map_or(0, |r| r.len())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_targets()];
        for row in &self.entries {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.iter().flatten().filter(|v| **v != 0.0).count()
    }

    /// Checks nonnegativity, row and column sums and restrictions, within `tol`.
    pub fn check(&self, game: Option<&AuditGame>, tol: f64) -> Result<(), AllocError> {
        let n = self.n_targets();
        if self.entries.iter().any(|r| r.len() != n) {
            return Err(AllocError::InvalidMatrix("ragged rows".into()));
        }
        for (j, row) in self.entries.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < -tol {
                    return Err(AllocError::InvalidMatrix(format!("entry ({j}, {i}) = {v}")));
                }
                if let Some(g) = game {
                    if !g.can_audit(j, i) && v > tol {
                        return Err(AllocError::InvalidMatrix(format!("restricted entry ({j}, {i}) = {v}")));
                    }
                }
            }
        }
        if let Some(s) = self.row_sums().into_iter().find(|&s| s > 1.0 + tol) {
            return Err(AllocError::InvalidMatrix(format!("row sum {s}")));
        }
        if let Some(s) = self.column_sums().into_iter().find(|&s| s > 1.0 + tol) {
            return Err(AllocError::InvalidMatrix(format!("column sum {s}")));
        }
        Ok(())
    }
}

fn flow_program(game: &AuditGame, p: &[f64], exact: bool) -> (LinearProgram, Vec<(usize, usize)>) {
    let pairs = game.allowed_pairs();
    let nv = pairs.len();
    let mut lp = LinearProgram::new(nv);
    let mut by_target = vec![Vec::new(); game.n_targets()];
    let mut by_resource = vec![Vec::new(); game.n_resources()];
    for (v, &(j, i)) in pairs.iter().enumerate() {
        by_target[i].push(v);
        by_resource[j].push(v);
    }
    for (i, vars) in by_target.iter().enumerate() {
        if vars.is_empty() {
            continue;
        }
        let mut row = vec![0.0; nv];
        vars.iter().for_each(|&v| row[v] = 1.0);
        let rhs = p[i].max(0.0);
        lp.add(if exact { Constraint::eq(row, rhs) } else { Constraint::le(row, rhs) });
    }
    for vars in by_resource.iter().filter(|v| !v.is_empty()) {
        let mut row = vec![0.0; nv];
        vars.iter().for_each(|&v| row[v] = 1.0);
        lp.add(Constraint::le(row, 1.0));
    }
    if !exact {
        lp.objective = vec![1.0; nv];
    }
    (lp, pairs)
}

/// Coverage mass that no allocation can carry: `sum p - max routable flow`.
pub fn lift_deficit(game: &AuditGame, p: &[f64]) -> Result<f64, AllocError> {
    if p.len() != game.n_targets() {
        return Err(AllocError::Dimension { expected: game.n_targets(), found: p.len() });
    }
    let (lp, _) = flow_program(game, p, false);
    let out = solve_lp(&lp)?;
    let total: f64 = p.iter().map(|v| v.max(0.0)).sum();
    Ok((total - out.objective_value).max(0.0))
}

/// Finds an allocation whose column sums equal `p`.
pub fn recover_allocation(game: &AuditGame, p: &[f64]) -> Result<AllocationMatrix, AllocError> {
    let n = game.n_targets();
    if p.len() != n {
        return Err(AllocError::Dimension { expected: n, found: p.len() });
    }
    let (lp, pairs) = flow_program(game, p, true);
    let mut out = solve_lp(&lp)?;
    if out.status != LpStatus::Optimal {
        // Points on the polytope boundary can miss the equality system by
        // rounding; accept the max-flow routing if the shortfall is tiny.
        let (flow, _) = flow_program(game, p, false);
        out = solve_lp(&flow)?;
        let total: f64 = p.iter().map(|v| v.max(0.0)).sum();
        let deficit = total - out.objective_value;
        if out.status != LpStatus::Optimal || deficit > LIFT_TOL {
            return Err(AllocError::Infeasible { deficit });
        }
    }
    let unroutable: f64 = (0..n).filter(|&i| game.is_unauditable(i)).map(|i| p[i].max(0.0)).sum();
    if unroutable > LIFT_TOL {
        return Err(AllocError::Infeasible { deficit: unroutable });
    }

    let mut m = AllocationMatrix::zeros(game.n_resources(), n);
    for (&(j, i), &v) in pairs.iter().zip(&out.solution) {
        m.entries[j][i] = v.max(0.0);
    }
    // Rescale each column onto p exactly.
    let cols = m.column_sums();
    for i in 0..n {
        let target = p[i].clamp(0.0, 1.0);
        if game.is_unauditable(i) {
            continue;
        }
        if cols[i] > 0.0 {
            let s = target / cols[i];
            m.entries.iter_mut().for_each(|r| r[i] *= s);
        } else if target > 0.0 {
            let rows = m.row_sums();
            let j = (0..game.n_resources())
                .filter(|&j| game.can_audit(j, i))
                .min_by(|&a, &b| rows[a].total_cmp(&rows[b]))
                .expect("auditable target has an allowed resource");
            m.entries[j][i] = target;
        }
    }
    Ok(m)
}

/// One pure assignment: each listed resource audits its target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// `(resource, target)` pairs, sorted by resource.
    pub assignment: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PureStrategyMixture {
    pub n_resources: usize,
    pub n_targets: usize,
    pub components: Vec<MixtureComponent>,
}

impl PureStrategyMixture {
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// `sum_q w_q M_q`.
    pub fn reconstruct(&self) -> AllocationMatrix {
        let mut m = AllocationMatrix::zeros(self.n_resources, self.n_targets);
        for c in &self.components {
            for &(j, i) in &c.assignment {
                m.entries[j][i] += c.weight;
            }
        }
        m
    }

    pub fn column_marginals(&self) -> Vec<f64> {
        self.reconstruct().column_sums()
    }
}

/// Kuhn's augmenting-path matching; returns `match_of_row[r] = column`.
fn perfect_matching(support: &[Vec<usize>], n: usize) -> Option<Vec<usize>> {
    let mut col_owner = vec![usize::MAX; n];
    fn augment(r: usize, support: &[Vec<usize>], seen: &mut [bool], col_owner: &mut [usize]) -> bool {
        for &c in &support[r] {
            if seen[c] {
                continue;
            }
            seen[c] = true;
            if col_owner[c] == usize::MAX || augment(col_owner[c], support, seen, col_owner) {
                col_owner[c] = r;
                return true;
            }
        }
        false
    }
    let mut seen = vec![false; n];
    for r in 0..n {
        seen.iter_mut().for_each(|s| *s = false);
        if !augment(r, support, &mut seen, &mut col_owner) {
            return None;
        }
    }
    let mut row_match = vec![0; n];
    for (c, &r) in col_owner.iter().enumerate() {
        row_match[r] = c;
    }
    Some(row_match)
}

/// Decomposes a doubly sub-stochastic matrix into pure assignments.
pub fn bvn_decompose(m: &AllocationMatrix) -> Result<PureStrategyMixture, AllocError> {
    m.check(None, 1e-9)?;
    let k = m.n_resources();
    let n = m.n_targets();
    let size = k + n;
    // Pad to a doubly stochastic (k+n) x (k+n) matrix:
    // [[M, diag(1 - row sums)], [diag(1 - column sums), M^T]].
    let rows = m.row_sums();
    let cols = m.column_sums();
    let mut d = vec![vec![0.0; size]; size];
    for j in 0..k {
        for i in 0..n {
            let v = m.entries[j][i].max(0.0);
            d[j][i] = v;
            d[k + i][n + j] = v;
        }
        d[j][n + j] = (1.0 - rows[j]).max(0.0);
    }
    for i in 0..n {
        d[k + i][i] = (1.0 - cols[i]).max(0.0);
    }

    let mut merged: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let mut components: Vec<MixtureComponent> = Vec::new();
    for _ in 0..size * size + 1 {
        let support: Vec<Vec<usize>> =
            d.iter().map(|r| (0..size).filter(|&c| r[c] > WEIGHT_FLOOR).collect()).collect();
        let Some(matching) = perfect_matching(&support, size) else {
            break;
        };
        let w = (0..size).map(|r| d[r][matching[r]]).fold(f64::INFINITY, f64::min);
        for r in 0..size {
            let e = &mut d[r][matching[r]];
            *e -= w;
            if *e <= WEIGHT_FLOOR {
                *e = 0.0;
            }
        }
        let assignment: Vec<(usize, usize)> = (0..k).filter(|&j| matching[j] < n).map(|j| (j, matching[j])).collect();
        match merged.get(&assignment) {
            Some(&idx) => components[idx].weight += w,
            None => {
                merged.insert(assignment.clone(), components.len());
                components.push(MixtureComponent { weight: w, assignment });
            }
        }
        let mass: f64 = d.iter().flatten().sum();
        if mass < RESIDUAL_TOL {
            break;
        }
    }

    let mut mix = PureStrategyMixture { n_resources: k, n_targets: n, components };
    let nnz = m.nonzeros();
    if mix.components.len() > nnz + 1 {
        reduce_support(&mut mix, m);
    }
    // Rounding leaves the total a hair off 1; the heaviest component absorbs it.
    let total = mix.total_weight();
    if let Some(c) = mix.components.iter_mut().max_by(|a, b| a.weight.total_cmp(&b.weight)) {
        c.weight += 1.0 - total;
    }

    let rec = mix.reconstruct();
    let residual = m
        .entries
        .iter()
        .flatten()
        .zip(rec.entries.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if residual > RESIDUAL_TOL || (mix.total_weight() - 1.0).abs() > RESIDUAL_TOL {
        return Err(AllocError::NumericalResidual { residual });
    }
    Ok(mix)
}

/// Caratheodory reduction: while more components than `nnz + 1` remain, find
/// an affine dependence among them and shift weight along it until one
/// component vanishes. Marginals and total weight are preserved.
fn reduce_support(mix: &mut PureStrategyMixture, m: &AllocationMatrix) {
    let positions: Vec<(usize, usize)> = (0..m.n_resources())
        .flat_map(|j| (0..m.n_targets()).map(move |i| (j, i)))
        .filter(|&(j, i)| m.entries[j][i] != 0.0)
        .collect();
    let index: HashMap<(usize, usize), usize> = positions.iter().enumerate().map(|(q, &p)| (p, q)).collect();
    let dim = positions.len() + 1;
    while mix.components.len() > dim {
        let cnt = dim + 1;
        // Columns: first `cnt` components; rows: positions + weight row.
        let mut a = vec![vec![0.0; cnt]; dim];
        for (c, comp) in mix.components.iter().take(cnt).enumerate() {
            for pair in &comp.assignment {
                if let Some(&q) = index.get(pair) {
                    a[q][c] = 1.0;
                }
            }
            a[dim - 1][c] = 1.0;
        }
        let Some(lambda) = null_vector(a, cnt) else {
            break;
        };
        // w - t * lambda, with t the largest step keeping weights nonnegative.
        let (mut t, mut hit) = (f64::INFINITY, usize::MAX);
        for (c, &l) in lambda.iter().enumerate() {
            if l > 1e-12 {
                let s = mix.components[c].weight / l;
                if s < t {
                    t = s;
                    hit = c;
                }
            }
        }
        if hit == usize::MAX {
            break;
        }
        for (c, &l) in lambda.iter().enumerate() {
            mix.components[c].weight -= t * l;
        }
        mix.components[hit].weight = 0.0;
        mix.components.retain(|c| c.weight > WEIGHT_FLOOR);
    }
}

/// Nonzero vector in the kernel of the `rows x cols` matrix `a` (cols > rows).
fn null_vector(mut a: Vec<Vec<f64>>, cols: usize) -> Option<Vec<f64>> {
    let rows = a.len();
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows).map(|i| (i, a[i][c].abs())).fold((r, 0.0), |b, x| if x.1 > b.1 { x } else { b });
        if val < 1e-10 {
            continue;
        }
        a.swap(r, best);
        let pv = a[r][c];
        a[r].iter_mut().for_each(|v| *v /= pv);
        for i in 0..rows {
            if i != r && a[i][c] != 0.0 {
                let f = a[i][c];
                for cc in 0..cols {
                    a[i][cc] -= f * a[r][cc];
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    let free = (0..cols).find(|c| !pivot_cols.contains(c))?;
    let mut v = vec![0.0; cols];
    v[free] = 1.0;
    for (row, &pc) in pivot_cols.iter().enumerate() {
        v[pc] = -a[row][free];
    }
    Some(v)
}
