//! Target-specific punishment rates.
//!
//! With one rate per target the star's own rate is zero at the optimum, so
//! only the star's coverage is discretized. For fixed star coverage each
//! best-response row becomes `kappa_i <= p_i (x_i + Delta_i)` with a constant
//! `kappa_i`, a hyperbolic (second-order cone) constraint, and the remaining
//! program is convex. It is solved with a log-barrier Newton method.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::constraints::ConstraintSet;
use crate::fpt::{better, prepare_constraints, unit_grid, CoverageSolution, Formulation, Method, SolveConfig, SolveError, SolveStats};
use crate::lp::{solve_lp, Constraint, LinearProgram, LpError, LpStatus};
use crate::model::{compute_deltas, AuditGame, DeltaTable};

/// Grid step for the star's coverage when none is given.
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Target duality gap `m / t` of the barrier method.
pub const GAP_TOL: f64 = 1e-8;
// Margins below this make the feasible set too thin for a barrier start.
const MIN_MARGIN: f64 = 1e-7;
const MAX_NEWTON: usize = 100;
const DECREMENT_TOL: f64 = 1e-10;
// Centering error adds about decrement / t to the gap, so a stalled but
// small decrement is harmless.
const STALL_DECREMENT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TspError {
    #[error("hyperbolic constraint needs kappa > 0, got {0}")]
    NonpositiveKappa(f64),
    #[error("program infeasible for star {star} at coverage {p_star}")]
    Infeasible { star: usize, p_star: f64 },
    #[error("barrier method stalled at t = {t}: {why}")]
    BarrierStall { t: f64, why: String },
    #[error(transparent)]
    Lp(#[from] LpError),
}

impl From<TspError> for SolveError {
    fn from(e: TspError) -> Self {
        match e {
            TspError::Lp(e) => SolveError::Lp(e),
            other => SolveError::VerificationFailed(other.to_string()),
        }
    }
}

/// `kappa <= p_var (x_var + shift)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HyperbolicConstraint {
    pub kappa: f64,
    pub var_p: usize,
    pub shift: f64,
    pub soc_k: f64,
}

impl HyperbolicConstraint {
    pub fn new(kappa: f64, var_p: usize, shift: f64) -> Self {
        Self { kappa, var_p, shift, soc_k: 2.0 * kappa.max(0.0).sqrt() }
    }

    pub fn holds(&self, p: f64, x: f64, tol: f64) -> bool {
        p * (x + self.shift) >= self.kappa - tol
    }
}

/// `||A (p, x) + b|| <= c . (p, x) + d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SocForm {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub d: f64,
}

impl SocForm {
    pub fn lhs(&self, p: f64, x: f64) -> f64 {
        let r0 = self.a[0][0] * p + self.a[0][1] * x + self.b[0];
        let r1 = self.a[1][0] * p + self.a[1][1] * x + self.b[1];
        r0.hypot(r1)
    }

    pub fn rhs(&self, p: f64, x: f64) -> f64 {
        self.c[0] * p + self.c[1] * x + self.d
    }

    pub fn holds(&self, p: f64, x: f64, tol: f64) -> bool {
        self.lhs(p, x) <= self.rhs(p, x) + tol
    }
}

/// Rewrites `kappa <= p (x + shift)` as
/// `||(2 sqrt(kappa), p - x - shift)|| <= p + x + shift`.
pub fn hyperbolic_to_soc(kappa: f64, shift: f64) -> Result<SocForm, TspError> {
    if kappa.is_nan() || kappa <= 0.0 {
        return Err(TspError::NonpositiveKappa(kappa));
    }
    Ok(SocForm {
        a: [[0.0, 0.0], [1.0, -1.0]],
        b: [2.0 * kappa.sqrt(), -shift],
        c: [1.0, 1.0],
        d: shift,
    })
}

/// Solution of one fixed-coverage program.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SocpPoint {
    pub p: Vec<f64>,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest constraint violation at the returned point.
    pub residual: f64,
    pub newton_steps: usize,
    /// True when the program had no strictly feasible point and the start LP
    /// solution was returned.
    pub degenerate: bool,
}

/// Hyperbolic rows of `star` at coverage `p_star`; rows with `kappa <= 0`
/// hold for every nonnegative point and are dropped.
pub fn hyperbolic_rows(d: &DeltaTable, star: usize, p_star: f64) -> Vec<HyperbolicConstraint> {
    (0..d.delta.len())
        .filter(|&i| i != star)
        .filter_map(|i| {
            let kappa = p_star * d.delta[star] + d.pair(i, star);
            (kappa > 0.0).then(|| HyperbolicConstraint::new(kappa, i, d.delta[i]))
        })
        .collect()
}

/// Linear rows `sum_{k in vars} p_k <= bound` over hyperbolic variables.
struct LinRow {
    vars: Vec<usize>,
    bound: f64,
}

struct Program {
    rows: Vec<HyperbolicConstraint>,
    costs: Vec<f64>,
    lin: Vec<LinRow>,
}

impl Program {
    fn dim(&self) -> usize {
        2 * self.rows.len()
    }

    /// Number of barrier terms.
    fn m(&self) -> usize {
        5 * self.rows.len() + self.lin.len()
    }

    /// Slacks of every barrier term, in a fixed order.
    fn slacks(&self, z: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.m());
        for (k, r) in self.rows.iter().enumerate() {
            let (p, x) = (z[2 * k], z[2 * k + 1]);
            s.extend([p * (x + r.shift) - r.kappa, p, 1.0 - p, x, 1.0 - x]);
        }
        for row in &self.lin {
            s.push(row.bound - row.vars.iter().map(|&k| z[2 * k]).sum::<f64>());
        }
        s
    }

    fn interior(&self, z: &[f64]) -> bool {
        self.slacks(z).iter().all(|&v| v > 0.0)
    }

    fn cost(&self, z: &[f64]) -> f64 {
        self.costs.iter().enumerate().map(|(k, a)| a * z[2 * k + 1]).sum()
    }

    fn barrier(&self, z: &[f64], t: f64) -> f64 {
        t * self.cost(z) - self.slacks(z).iter().map(|v| v.ln()).sum::<f64>()
    }

    fn grad_hess(&self, z: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for (k, r) in self.rows.iter().enumerate() {
            let (ip, ix) = (2 * k, 2 * k + 1);
            let (p, x) = (z[ip], z[ix]);
            g[ix] += t * self.costs[k];
            let q = p * (x + r.shift) - r.kappa;
            let (dp, dx) = (x + r.shift, p);
            g[ip] -= dp / q;
            g[ix] -= dx / q;
            h[(ip, ip)] += dp * dp / (q * q);
            h[(ix, ix)] += dx * dx / (q * q);
            let cross = dp * dx / (q * q) - 1.0 / q;
            h[(ip, ix)] += cross;
            h[(ix, ip)] += cross;
            for (i, v) in [(ip, p), (ix, x)] {
                g[i] += -1.0 / v + 1.0 / (1.0 - v);
                h[(i, i)] += 1.0 / (v * v) + 1.0 / ((1.0 - v) * (1.0 - v));
            }
        }
        for row in &self.lin {
            let s = row.bound - row.vars.iter().map(|&k| z[2 * k]).sum::<f64>();
            for &a in &row.vars {
                g[2 * a] += 1.0 / s;
                for &b in &row.vars {
                    h[(2 * a, 2 * b)] += 1.0 / (s * s);
                }
            }
        }
        (g, h)
    }

    fn residual(&self, z: &[f64]) -> f64 {
        self.slacks(z).iter().map(|&v| -v).fold(0.0, f64::max)
    }
}

fn newton_direction(g: &DVector<f64>, mut h: DMatrix<f64>) -> Option<DVector<f64>> {
    // Symmetric diagonal scaling; barrier Hessians near the boundary span many
    // orders of magnitude.
    let n = g.len();
    let scale: Vec<f64> = (0..n).map(|i| 1.0 / h[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] *= scale[i] * scale[j];
        }
    }
    let rhs = DVector::from_iterator(n, (0..n).map(|i| -g[i] * scale[i]));
    let y = match h.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => h.lu().solve(&rhs)?,
    };
    Some(DVector::from_iterator(n, (0..n).map(|i| y[i] * scale[i])))
}

/// Centering: minimizes `t * cost - sum log(slack)` from a strictly feasible `z`.
fn center(prog: &Program, z: &mut [f64], t: f64, steps: &mut usize) -> Result<(), TspError> {
    let mut decrement = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        let (g, h) = prog.grad_hess(z, t);
        let dir = newton_direction(&g, h)
            .ok_or_else(|| TspError::BarrierStall { t, why: "singular Newton system".into() })?;
        decrement = -g.dot(&dir);
        if decrement / 2.0 <= DECREMENT_TOL {
            return Ok(());
        }
        *steps += 1;
        let f0 = prog.barrier(z, t);
        let mut step = 1.0;
        let trial = |step: f64| -> Vec<f64> { z.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect() };
        loop {
            let cand = trial(step);
            if prog.interior(&cand) && prog.barrier(&cand, t) <= f0 - 0.25 * step * decrement {
                z.copy_from_slice(&cand);
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                // Rounding in the barrier value hides any further decrease.
                if decrement <= STALL_DECREMENT {
                    return Ok(());
                }
                return Err(TspError::BarrierStall { t, why: format!("line search failed, decrement {decrement:e}") });
            }
        }
    }
    if decrement <= STALL_DECREMENT {
        return Ok(());
    }
    Err(TspError::BarrierStall { t, why: format!("no convergence in {MAX_NEWTON} Newton steps, decrement {decrement:e}") })
}

/// Maximizes the common margin `s` of every inequality at `x = 1`; returns
/// `(s, p)` or `None` when even `s = -1` is out of reach.
fn margin_start(prog: &Program) -> Result<Option<(f64, Vec<f64>)>, TspError> {
    let h = prog.rows.len();
    // Variables: p_0..p_{h-1}, u = s + 1.
    let mut lp = LinearProgram::new(h + 1);
    lp.objective[h] = 1.0;
    lp.bounds[h] = (0.0, 1.5);
    let row = |pairs: &[(usize, f64)]| {
        let mut c = vec![0.0; h + 1];
        for &(i, v) in pairs {
            c[i] += v;
        }
        c
    };
    for (k, r) in prog.rows.iter().enumerate() {
        lp.add(Constraint::le(row(&[(k, -(1.0 + r.shift)), (h, 1.0)]), 1.0 - r.kappa));
        lp.add(Constraint::le(row(&[(k, -1.0), (h, 1.0)]), 1.0));
        lp.add(Constraint::le(row(&[(k, 1.0), (h, 1.0)]), 2.0));
    }
    for l in &prog.lin {
        let mut pairs: Vec<(usize, f64)> = l.vars.iter().map(|&k| (k, 1.0)).collect();
        pairs.push((h, 1.0));
        lp.add(Constraint::le(row(&pairs), l.bound + 1.0));
    }
    let out = solve_lp(&lp)?;
    match out.status {
        LpStatus::Optimal => Ok(Some((out.solution[h] - 1.0, out.solution[..h].to_vec()))),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(TspError::Lp(LpError::NumericalBreakdown("bounded margin program unbounded".into()))),
    }
}

/// Lowers every rate to the smallest value its hyperbolic row allows.
fn tighten_rates(prog: &Program, z: &mut [f64]) {
    for (k, r) in prog.rows.iter().enumerate() {
        let p = z[2 * k];
        if p > 0.0 && prog.costs[k] > 0.0 {
            let need = (r.kappa / p - r.shift).max(0.0);
            if need <= z[2 * k + 1] && p * (need + r.shift) >= r.kappa {
                z[2 * k + 1] = need;
            }
        }
    }
}

/// Minimizes the punishment cost with the star's coverage fixed at `p_star`
/// and its rate at zero.
pub fn solve_socp_fixed(
    game: &AuditGame,
    set: &ConstraintSet,
    star: usize,
    p_star: f64,
) -> Result<SocpPoint, TspError> {
    let n = game.n_targets();
    let d = compute_deltas(game);
    let rows = hyperbolic_rows(&d, star, p_star);
    let infeasible = || TspError::Infeasible { star, p_star };
    if rows.iter().any(|r| r.kappa > 1.0 + r.shift || set.is_pinned(r.var_p)) || (set.is_pinned(star) && p_star > 0.0) {
        return Err(infeasible());
    }
    let mut slot = vec![usize::MAX; n];
    rows.iter().enumerate().for_each(|(k, r)| slot[r.var_p] = k);
    let mut lin = Vec::new();
    for c in set.constraints() {
        let bound = c.bound as f64 - if c.targets.contains(&star) { p_star } else { 0.0 };
        let vars: Vec<usize> = c.targets.iter().filter(|&&i| slot[i] != usize::MAX).map(|&i| slot[i]).collect();
        if vars.is_empty() {
            if bound < -1e-12 {
                return Err(infeasible());
            }
            continue;
        }
        lin.push(LinRow { vars, bound });
    }
    let all_costs = game.effective_target_costs();
    let costs = rows.iter().map(|r| all_costs[r.var_p]).collect();
    let prog = Program { rows, costs, lin };

    let finish = |z: Vec<f64>, steps: usize, degenerate: bool| {
        let mut p = vec![0.0; n];
        let mut x = vec![0.0; n];
        p[star] = p_star;
        for (k, r) in prog.rows.iter().enumerate() {
            p[r.var_p] = z[2 * k].clamp(0.0, 1.0);
            x[r.var_p] = z[2 * k + 1].clamp(0.0, 1.0);
        }
        let t = game.target(star);
        let objective = t.ud_unaudited + p_star * (t.ud_audited - t.ud_unaudited)
            - all_costs.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>();
        SocpPoint { p, x, objective, residual: prog.residual(&z), newton_steps: steps, degenerate }
    };
    if prog.rows.is_empty() {
        return Ok(finish(Vec::new(), 0, false));
    }

    let (s, p0) = margin_start(&prog)?.ok_or_else(infeasible)?;
    if s < -1e-9 {
        return Err(infeasible());
    }
    if s < MIN_MARGIN {
        let mut z: Vec<f64> = p0.iter().flat_map(|&p| [p.clamp(0.0, 1.0), 1.0]).collect();
        tighten_rates(&prog, &mut z);
        return Ok(finish(z, 0, true));
    }
    let mut z: Vec<f64> = p0.iter().flat_map(|&p| [p, 1.0 - s / 4.0]).collect();
    debug_assert!(prog.interior(&z));
    let m = prog.m() as f64;
    let mut t = 1.0;
    let mut steps = 0;
    loop {
        center(&prog, &mut z, t, &mut steps)?;
        if m / t < GAP_TOL {
            break;
        }
        t *= 2.0;
    }
    tighten_rates(&prog, &mut z);
    Ok(finish(z, steps, false))
}

/// Per-star summary of the coverage sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StarSweep {
    pub star: usize,
    pub programs: usize,
    pub infeasible: usize,
    pub best_objective: Option<f64>,
    pub best_p_star: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TspOutput {
    pub solution: CoverageSolution,
    pub stats: SolveStats,
    pub stars: Vec<StarSweep>,
}

/// Best point over every star and every star coverage on the `epsilon` grid.
pub fn solve_px(game: &AuditGame, cfg: &SolveConfig) -> Result<TspOutput, SolveError> {
    cfg.validate()?;
    let set = prepare_constraints(game, cfg)?;
    let grid = unit_grid(cfg.epsilon);
    let run = |star: usize| -> Result<(StarSweep, Option<SocpPoint>), SolveError> {
        let mut sweep = StarSweep { star, programs: 0, infeasible: 0, best_objective: None, best_p_star: None };
        let mut best: Option<SocpPoint> = None;
        for &ps in &grid {
            sweep.programs += 1;
            match solve_socp_fixed(game, &set, star, ps) {
                Ok(pt) => {
                    let take = match &best {
                        None => true,
                        Some(b) => better((pt.objective, ps, star), (b.objective, b.p[star], star)),
                    };
                    if take {
                        sweep.best_objective = Some(pt.objective);
                        sweep.best_p_star = Some(ps);
                        best = Some(pt);
                    }
                }
                Err(TspError::Infeasible { .. }) => sweep.infeasible += 1,
                Err(e) => return Err(e.into()),
            }
        }
        Ok((sweep, best))
    };
    let runs: Vec<_> = if cfg.parallel {
        (0..game.n_targets()).into_par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        (0..game.n_targets()).map(run).collect::<Result<_, _>>()?
    };
    let mut stats = SolveStats { constraint_count: Some(set.len()), guarantee_applies: true, ..Default::default() };
    let mut stars = Vec::new();
    let mut best: Option<(usize, SocpPoint)> = None;
    for (sweep, pt) in runs {
        stats.programs_solved += sweep.programs;
        stats.infeasible_programs += sweep.infeasible;
        let star = sweep.star;
        stars.push(sweep);
        if let Some(pt) = pt {
            let take = match &best {
                None => true,
                Some((s, b)) => better((pt.objective, pt.p[star], star), (b.objective, b.p[*s], *s)),
            };
            if take {
                best = Some((star, pt));
            }
        }
    }
    let (star, pt) = best.ok_or(SolveError::AllProgramsInfeasible)?;
    let solution = CoverageSolution {
        x: pt.x[star],
        p: pt.p,
        x_per_target: Some(pt.x),
        objective: pt.objective,
        star,
        formulation: Formulation::Transformed,
        method: Method::Tsp,
    };
    Ok(TspOutput { solution, stats, stars })
}
