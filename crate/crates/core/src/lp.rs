//! Dense two-phase primal simplex.
//!
//! Variables are shifted to a zero lower bound, finite upper bounds become
//! explicit rows, equalities are split into two inequalities and rows with a
//! negative right-hand side get an artificial variable for phase one. Pricing
//! is Dantzig's rule with lowest-index tie breaking; after a long run of
//! degenerate pivots the solver switches to Bland's rule for the rest of the
//! phase, which guarantees termination.

use thiserror::Error;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-9;
/// Smallest pivot magnitude accepted.
pub const PIVOT_TOL: f64 = 1e-11;
const OPT_TOL: f64 = 1e-9;
/// Slack used by [`implies`].
pub const IMPLIES_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, rel: Relation, rhs: f64) -> Self {
        Self { coeffs, rel, rhs }
    }

    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self::new(coeffs, Relation::Le, rhs)
    }

    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self::new(coeffs, Relation::Ge, rhs)
    }

    pub fn eq(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self::new(coeffs, Relation::Eq, rhs)
    }

    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Amount by which `x` violates this constraint (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.lhs(x) - self.rhs;
        match self.rel {
            Relation::Le => v.max(0.0),
            Relation::Ge => (-v).max(0.0),
            Relation::Eq => v.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    /// Maximized.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// Per-variable `(lo, hi)`; `lo` must be finite, `hi` may be infinite.
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        Self { objective: vec![0.0; n_vars], constraints: Vec::new(), bounds: vec![(0.0, f64::INFINITY); n_vars] }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(x));
        let boxes = self
            .bounds
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0));
        rows.chain(boxes).fold(0.0, f64::max)
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.bounds.len() != n {
            return Err(LpError::Malformed(format!("{} bounds for {} variables", self.bounds.len(), n)));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::Malformed(format!("constraint {i} has {} coefficients", c.coeffs.len())));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(LpError::Malformed(format!("constraint {i} has a non-finite entry")));
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || hi.is_nan() || lo > hi {
                return Err(LpError::Malformed(format!("variable {j} has bounds ({lo}, {hi})")));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("non-finite objective coefficient".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Dual certificate: `c = A^T row + upper - lower`, with `row` sign-constrained
/// by each constraint's relation and `upper`, `lower` nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct LpDuals {
    pub row: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub solution: Vec<f64>,
    pub objective_value: f64,
    pub is_vertex: bool,
    pub duals: Option<LpDuals>,
    /// Simplex pivots performed across both phases.
    pub iterations: usize,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn without_solution(status: LpStatus) -> Self {
        let objective_value = match status {
            LpStatus::Unbounded => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        };
        Self { status, solution: Vec::new(), objective_value, is_vertex: false, duals: None, iterations: 0 }
    }
}

// Where a standardized row came from, for mapping duals back.
#[derive(Clone, Copy)]
enum RowOrigin {
    // Original constraint, with the sign applied to put it in `<=` form.
    Constraint(usize, f64),
    Upper(usize),
}

struct Tableau {
    m: usize,
    ncols: usize,
    stride: usize,
    // (m + 1) rows; the last one holds reduced costs and -objective in the rhs slot.
    t: Vec<f64>,
    basis: Vec<usize>,
    // Columns barred from entering (artificials after phase one).
    barred: Vec<bool>,
    nz: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.stride + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.t[r * self.stride + self.ncols]
    }

    fn obj_row(&self) -> usize {
        self.m
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let stride = self.stride;
        let pv = self.t[p * stride + q];
        let inv = 1.0 / pv;
        self.nz.clear();
        {
            let row = &mut self.t[p * stride..(p + 1) * stride];
            for (j, v) in row.iter_mut().enumerate() {
                if *v != 0.0 {
                    *v *= inv;
                    self.nz.push(j);
                }
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(p * stride);
        let (prow, after) = rest.split_at_mut(stride);
        let nz = &self.nz;
        // Scattered updates only pay off while the pivot row is sparse.
        let dense = nz.len() * 4 > stride;
        let update = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                if dense {
                    for (r, &pv) in row.iter_mut().zip(prow.iter()) {
                        *r -= f * pv;
                    }
                } else {
                    for &j in nz {
                        row[j] -= f * prow[j];
                    }
                }
                row[q] = 0.0;
            }
        };
        before.chunks_exact_mut(stride).for_each(update);
        after.chunks_exact_mut(stride).for_each(update);
        self.basis[p] = q;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the current objective row.
    fn optimize(&mut self) -> Result<bool, LpError> {
        let m = self.m;
        let size = m + self.ncols;
        let bland_after = 3 * size;
        let max_iter = 50 * size + 1000;
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut skipped = vec![false; self.ncols];
        let obj = self.obj_row();

        for _ in 0..max_iter {
            let mut entering = None;
            let mut any_skipped = false;
            {
                let orow = &self.t[obj * self.stride..obj * self.stride + self.ncols];
                let mut best = OPT_TOL;
                for (j, &d) in orow.iter().enumerate() {
                    if self.barred[j] || d <= OPT_TOL {
                        continue;
                    }
                    if skipped[j] {
                        any_skipped = true;
                        continue;
                    }
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if d > best {
                        best = d;
                        entering = Some(j);
                    }
                }
            }
            let Some(q) = entering else {
                if any_skipped {
                    return Err(LpError::NumericalBreakdown("only sub-tolerance pivots remain".into()));
                }
                return Ok(true);
            };

            let mut leave: Option<(usize, f64)> = None;
            let mut tiny = false;
            for r in 0..m {
                let a = self.at(r, q);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((br, bratio)) => {
                            let better = ratio < bratio - 1e-12
                                || (ratio <= bratio + 1e-12 && self.basis[r] < self.basis[br]);
                            if better {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                } else if a > 0.0 {
                    tiny = true;
                }
            }
            let Some((p, ratio)) = leave else {
                if tiny {
                    skipped[q] = true;
                    continue;
                }
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
                if degenerate >= bland_after && !bland {
                    log::debug!("simplex switching to Bland's rule after {degenerate} degenerate pivots");
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(p, q);
            skipped.iter_mut().for_each(|s| *s = false);
        }
        Err(LpError::NumericalBreakdown(format!("iteration limit reached ({max_iter})")))
    }
}

/// Solves `lp` (maximization) with the two-phase simplex method.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    lp.check()?;
    let n = lp.n_vars();

    // Structural columns only for non-fixed variables.
    let mut col_of = vec![usize::MAX; n];
    let mut vars = Vec::new();
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if hi > lo {
            col_of[j] = vars.len();
            vars.push(j);
        }
    }
    let ns = vars.len();
    let lo: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();

    // Standardized rows: coefficients on structural columns, rhs, origin.
    let mut rows: Vec<(Vec<(usize, f64)>, f64, RowOrigin)> = Vec::new();
    for (i, c) in lp.constraints.iter().enumerate() {
        let shift: f64 = c.coeffs.iter().zip(&lo).map(|(a, l)| a * l).sum();
        let b = c.rhs - shift;
        let sparse: Vec<(usize, f64)> = c
            .coeffs
            .iter()
            .enumerate()
            .filter(|&(j, &a)| a != 0.0 && col_of[j] != usize::MAX)
            .map(|(j, &a)| (col_of[j], a))
            .collect();
        let neg = |v: &Vec<(usize, f64)>| v.iter().map(|&(j, a)| (j, -a)).collect::<Vec<_>>();
        match c.rel {
            Relation::Le => rows.push((sparse, b, RowOrigin::Constraint(i, 1.0))),
            Relation::Ge => rows.push((neg(&sparse), -b, RowOrigin::Constraint(i, -1.0))),
            Relation::Eq => {
                rows.push((sparse.clone(), b, RowOrigin::Constraint(i, 1.0)));
                rows.push((neg(&sparse), -b, RowOrigin::Constraint(i, -1.0)));
            }
        }
    }
    for (c, &j) in vars.iter().enumerate() {
        let (l, h) = lp.bounds[j];
        if h.is_finite() {
            rows.push((vec![(c, 1.0)], h - l, RowOrigin::Upper(j)));
        }
    }

    // Rows with no structural entries are either trivially true or infeasible.
    let mut kept = Vec::with_capacity(rows.len());
    for row in rows {
        if row.0.is_empty() {
            if row.1 < -FEAS_TOL {
                return Ok(LpOutcome::without_solution(LpStatus::Infeasible));
            }
        } else {
            kept.push(row);
        }
    }
    let rows = kept;
    let m = rows.len();
    let n_art = rows.iter().filter(|r| r.1 < 0.0).count();
    let ncols = ns + m + n_art;
    let stride = ncols + 1;
    let mut tab = Tableau {
        m,
        ncols,
        stride,
        t: vec![0.0; (m + 1) * stride],
        basis: vec![0; m],
        barred: vec![false; ncols],
        nz: Vec::with_capacity(ncols),
        pivots: 0,
    };
    let mut art = ns + m;
    for (r, (coefs, b, _)) in rows.iter().enumerate() {
        let base = r * stride;
        let flip = if *b < 0.0 { -1.0 } else { 1.0 };
        for &(j, a) in coefs {
            tab.t[base + j] += flip * a;
        }
        tab.t[base + ns + r] = flip;
        tab.t[base + ncols] = flip * b;
        if flip < 0.0 {
            tab.t[base + art] = 1.0;
            tab.basis[r] = art;
            art += 1;
        } else {
            tab.basis[r] = ns + r;
        }
    }

    let obj = m * stride;
    if n_art > 0 {
        // Phase one: maximize -(sum of artificials).
        for r in 0..m {
            if tab.basis[r] >= ns + m {
                for j in 0..stride {
                    tab.t[obj + j] += tab.t[r * stride + j];
                }
            }
        }
        for j in ns + m..ncols {
            tab.t[obj + j] = 0.0;
        }
        tab.optimize()?;
        let infeas = tab.t[obj + ncols];
        if infeas > FEAS_TOL * (1.0 + rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max)) {
            return Ok(LpOutcome::without_solution(LpStatus::Infeasible));
        }
        for j in ns + m..ncols {
            tab.barred[j] = true;
        }
        // Drive artificials still basic at zero level out of the basis.
        for r in 0..m {
            if tab.basis[r] >= ns + m {
                let pick = (0..ns + m).find(|&j| tab.at(r, j).abs() > 1e-9);
                if let Some(q) = pick {
                    tab.pivot(r, q);
                }
            }
        }
    }

    // Phase two objective: reduced costs c_j - c_B B^-1 A_j.
    for j in 0..stride {
        tab.t[obj + j] = 0.0;
    }
    for (c, &j) in vars.iter().enumerate() {
        tab.t[obj + c] = lp.objective[j];
    }
    for r in 0..m {
        let bj = tab.basis[r];
        if bj < ns {
            let cb = tab.t[obj + bj];
            if cb != 0.0 {
                for j in 0..stride {
                    let v = tab.t[r * stride + j];
                    if v != 0.0 {
                        tab.t[obj + j] -= cb * v;
                    }
                }
            }
        }
    }
    for r in 0..m {
        let bj = tab.basis[r];
        if bj < ns {
            tab.t[obj + bj] = 0.0;
        }
    }
    if !tab.optimize()? {
        return Ok(LpOutcome::without_solution(LpStatus::Unbounded));
    }

    let mut x = lo.clone();
    for r in 0..m {
        let bj = tab.basis[r];
        if bj < ns {
            x[vars[bj]] += tab.rhs(r).max(0.0);
        }
    }
    for (j, v) in x.iter_mut().enumerate() {
        let (l, h) = lp.bounds[j];
        *v = v.clamp(l, h);
    }
    let objective_value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();

    // Duals of standardized rows from the slack columns' reduced costs.
    let mut row_dual = vec![0.0; lp.constraints.len()];
    let mut upper = vec![0.0; n];
    for (r, (_, _, origin)) in rows.iter().enumerate() {
        let y = -tab.t[obj + ns + r];
        match *origin {
            RowOrigin::Constraint(i, sign) => row_dual[i] += sign * y,
            RowOrigin::Upper(j) => upper[j] += y,
        }
    }
    let mut lower = vec![0.0; n];
    for j in 0..n {
        let aty: f64 = lp.constraints.iter().zip(&row_dual).map(|(c, y)| c.coeffs[j] * y).sum();
        let resid = lp.objective[j] - aty - upper[j];
        if col_of[j] == usize::MAX {
            if resid >= 0.0 {
                upper[j] += resid;
            } else {
                lower[j] = -resid;
            }
        } else {
            lower[j] = -resid;
        }
    }

    let viol = lp.max_violation(&x);
    if viol > 1e-6 {
        return Err(LpError::NumericalBreakdown(format!("solution violates constraints by {viol:e}")));
    }
    Ok(LpOutcome {
        status: LpStatus::Optimal,
        solution: x,
        objective_value,
        is_vertex: true,
        duals: Some(LpDuals { row: row_dual, upper, lower }),
        iterations: tab.pivots,
    })
}

/// Finds any point satisfying `constraints` within `bounds`.
pub fn solve_feasibility(constraints: &[Constraint], bounds: &[(f64, f64)]) -> Result<LpOutcome, LpError> {
    let lp = LinearProgram {
        objective: vec![0.0; bounds.len()],
        constraints: constraints.to_vec(),
        bounds: bounds.to_vec(),
    };
    solve_lp(&lp)
}

/// True when every point of `polytope` inside the unit box satisfies `c`
/// (up to [`IMPLIES_TOL`]). An empty polytope implies everything.
pub fn implies(polytope: &[Constraint], c: &Constraint) -> Result<bool, LpError> {
    let n = c.coeffs.len();
    let bounds = vec![(0.0, 1.0); n];
    let check = |sign: f64| -> Result<bool, LpError> {
        let lp = LinearProgram {
            objective: c.coeffs.iter().map(|a| sign * a).collect(),
            constraints: polytope.to_vec(),
            bounds: bounds.clone(),
        };
        let out = solve_lp(&lp)?;
        Ok(match out.status {
            LpStatus::Optimal => out.objective_value <= sign * c.rhs + IMPLIES_TOL,
            LpStatus::Infeasible => true,
            LpStatus::Unbounded => false,
        })
    };
    match c.rel {
        Relation::Le => check(1.0),
        Relation::Ge => check(-1.0),
        Relation::Eq => Ok(check(1.0)? && check(-1.0)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp1(obj: f64, cons: Vec<Constraint>) -> LinearProgram {
        LinearProgram { objective: vec![obj], constraints: cons, bounds: vec![(0.0, f64::INFINITY)] }
    }

    #[test]
    fn single_variable() {
        let out = solve_lp(&lp1(1.0, vec![Constraint::le(vec![1.0], 1.0)])).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.solution[0] - 1.0).abs() < 1e-12);
        let out = solve_lp(&lp1(1.0, vec![Constraint::le(vec![1.0], -1.0)])).unwrap();
        assert_eq!(out.status, LpStatus::Infeasible);
        let out = solve_lp(&lp1(1.0, vec![])).unwrap();
        assert_eq!(out.status, LpStatus::Unbounded);
    }

    #[test]
    fn binding_sum() {
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            constraints: vec![Constraint::le(vec![1.0, 1.0], 1.5)],
            bounds: vec![(0.0, 1.0); 2],
        };
        let out = solve_lp(&lp).unwrap();
        assert!((out.objective_value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn feasibility_examples() {
        let out = solve_feasibility(&[Constraint::eq(vec![1.0], 0.5)], &[(0.0, 1.0)]).unwrap();
        assert!((out.solution[0] - 0.5).abs() < 1e-12);
        let out = solve_feasibility(&[Constraint::ge(vec![1.0], 2.0)], &[(0.0, 1.0)]).unwrap();
        assert_eq!(out.status, LpStatus::Infeasible);
        // One resource, two targets: allocation must match p = (0.4, 0.6).
        let cons = vec![
            Constraint::eq(vec![1.0, 0.0], 0.4),
            Constraint::eq(vec![0.0, 1.0], 0.6),
            Constraint::le(vec![1.0, 1.0], 1.0),
        ];
        let out = solve_feasibility(&cons, &[(0.0, f64::INFINITY); 2]).unwrap();
        assert!((out.solution[0] - 0.4).abs() < 1e-12 && (out.solution[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn implication_examples() {
        let a = [Constraint::le(vec![1.0, 1.0], 1.0)];
        assert!(implies(&a, &Constraint::le(vec![1.0, 0.0], 1.0)).unwrap());
        let a = [Constraint::le(vec![1.0, 0.0], 0.5)];
        assert!(!implies(&a, &Constraint::le(vec![1.0, 1.0], 1.0)).unwrap());
        let a = [Constraint::le(vec![1.0, 1.0, 1.0], 2.0)];
        assert!(implies(&a, &Constraint::le(vec![1.0, 1.0, 0.0], 2.0)).unwrap());
    }

    #[test]
    fn shifted_and_fixed_bounds() {
        let lp = LinearProgram {
            objective: vec![1.0, -1.0, 2.0],
            constraints: vec![Constraint::le(vec![1.0, 1.0, 1.0], 3.0)],
            bounds: vec![(-1.0, 5.0), (0.5, 2.0), (0.75, 0.75)],
        };
        let out = solve_lp(&lp).unwrap();
        assert!((out.solution[0] - 1.75).abs() < 1e-12);
        assert!((out.solution[1] - 0.5).abs() < 1e-12);
        assert_eq!(out.solution[2], 0.75);
    }

    #[test]
    fn beale_cycling_instance_terminates() {
        // Beale's example cycles under textbook Dantzig pricing.
        let lp = LinearProgram {
            objective: vec![0.75, -150.0, 0.02, -6.0],
            constraints: vec![
                Constraint::le(vec![0.25, -60.0, -0.04, 9.0], 0.0),
                Constraint::le(vec![0.5, -90.0, -0.02, 3.0], 0.0),
                Constraint::le(vec![0.0, 0.0, 1.0, 0.0], 1.0),
            ],
            bounds: vec![(0.0, f64::INFINITY); 4],
        };
        let out = solve_lp(&lp).unwrap();
        assert!((out.objective_value - 0.05).abs() < 1e-9);
    }

    #[test]
    fn redundant_equalities() {
        let lp = LinearProgram {
            objective: vec![1.0, 2.0],
            constraints: vec![
                Constraint::eq(vec![1.0, 1.0], 1.0),
                Constraint::eq(vec![2.0, 2.0], 2.0),
            ],
            bounds: vec![(0.0, 1.0); 2],
        };
        let out = solve_lp(&lp).unwrap();
        assert!((out.objective_value - 2.0).abs() < 1e-12);
    }
}
