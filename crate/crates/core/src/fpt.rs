//! Discretized-punishment solver: for every candidate best-response target and
//! every punishment rate on a grid, the defender's program is an LP.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{lift_deficit, AllocError};
use crate::constraints::{
    build_intersection_graph, constraint_find, merge_targets, tractability_check, ConstraintSet, ExtractError,
    TractabilityThresholds, DEFAULT_ENUMERATION_CAP,
};
use crate::lp::{solve_lp, Constraint, LinearProgram, LpError, LpStatus};
use crate::model::{compute_deltas, AuditGame, DeltaTable};
use crate::poly::PolyError;

/// Tolerance used when checking returned solutions.
pub const VERIFY_TOL: f64 = 1e-7;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no best-response program is feasible")]
    AllProgramsInfeasible,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("solution failed verification: {0}")]
    VerificationFailed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Variables for every allowed (resource, target) pair.
    Grid,
    /// Coverage variables with the extracted constraint set.
    Transformed,
    /// Transformed when extraction finishes under the cap, grid otherwise.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fpt,
    Fptas,
    Tsp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    /// Grid step for the discretized variable (punishment rate, or the star
    /// coverage in target-specific mode).
    pub epsilon: f64,
    pub formulation: Formulation,
    pub enumeration_cap: usize,
    /// Root precision `l` for the FPTAS.
    pub root_bits: u32,
    /// Use the `a1` term of the objective; when false it is treated as 0.
    pub a1_enabled: bool,
    /// Drop implied coverage constraints after extraction.
    pub prune_constraints: bool,
    /// Evaluate best-response targets on the rayon pool.
    pub parallel: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            formulation: Formulation::Auto,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            root_bits: 20,
            a1_enabled: true,
            prune_constraints: true,
            parallel: false,
        }
    }
}

impl SolveConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_formulation(mut self, f: Formulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(SolveError::Config(format!("epsilon must lie in (0, 0.5], got {}", self.epsilon)));
        }
        if self.root_bits == 0 {
            return Err(SolveError::Config("root bits must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn a1(&self, game: &AuditGame) -> f64 {
        if self.a1_enabled {
            game.cost_a1()
        } else {
            0.0
        }
    }
}

/// Grid `0, eps, 2 eps, ..., 1`, always ending exactly at 1.
pub fn unit_grid(eps: f64) -> Vec<f64> {
    let steps = (1.0 / eps - 1e-9).ceil() as usize;
    (0..=steps).map(|i| (i as f64 * eps).min(1.0)).collect()
}

/// A defender commitment and the attacker's best response to it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageSolution {
    pub p: Vec<f64>,
    /// Uniform punishment rate; in target-specific mode the star's rate.
    pub x: f64,
    /// Per-target punishment rates (target-specific mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_per_target: Option<Vec<f64>>,
    pub objective: f64,
    pub star: usize,
    pub formulation: Formulation,
    pub method: Method,
}

impl CoverageSolution {
    pub fn x_of(&self, i: usize) -> f64 {
        match &self.x_per_target {
            Some(v) => v[i],
            None => self.x,
        }
    }

    /// Attacker payoff at each target.
    pub fn attacker_payoffs(&self, game: &AuditGame) -> Vec<f64> {
        (0..game.n_targets()).map(|i| game.attacker_utility(i, self.p[i], self.x_of(i))).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub programs_solved: usize,
    pub infeasible_programs: usize,
    /// Whether the additive-error guarantee of the discretization applies
    /// (fails only when the best punishment is tiny and the star's attacker
    /// gap is zero).
    pub guarantee_applies: bool,
    pub constraint_count: Option<usize>,
    pub fallback_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveOutput {
    pub solution: CoverageSolution,
    pub stats: SolveStats,
}

/// How the coverage vector is read off an LP solution.
#[derive(Clone, Debug, PartialEq)]
pub enum CoverageMap {
    /// Variable `i` is `p_i`.
    Direct,
    /// Variable `v` is the allocation of `pairs[v] = (resource, target)`.
    Pairs(Vec<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StarProgram {
    pub lp: LinearProgram,
    pub map: CoverageMap,
    /// Added to the LP objective to get the defender's utility.
    pub offset: f64,
}

impl StarProgram {
    pub fn coverage(&self, n: usize, z: &[f64]) -> Vec<f64> {
        match &self.map {
            CoverageMap::Direct => z.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            CoverageMap::Pairs(pairs) => {
                let mut p = vec![0.0; n];
                for (&(_, i), &v) in pairs.iter().zip(z) {
                    p[i] += v;
                }
                p.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                p
            }
        }
    }
}

/// Builds the defender's LP for a fixed punishment `x`, assuming `star` is the
/// attacker's best response. `constraints` is required for the transformed
/// formulation.
pub fn build_program(
    game: &AuditGame,
    deltas: &DeltaTable,
    star: usize,
    x: f64,
    a1: f64,
    formulation: Formulation,
    constraints: Option<&ConstraintSet>,
) -> Result<StarProgram, SolveError> {
    let n = game.n_targets();
    let gain = deltas.delta_d[star] - a1 * x;
    let offset = game.target(star).ud_unaudited - game.cost_a() * x;
    let slope_star = x + deltas.delta[star];
    match formulation {
        Formulation::Transformed => {
            let set = constraints.ok_or_else(|| SolveError::Config("transformed formulation needs constraints".into()))?;
            let mut lp = LinearProgram::new(n);
            lp.objective[star] = gain;
            for i in 0..n {
                lp.bounds[i] = if set.is_pinned(i) { (0.0, 0.0) } else { (0.0, 1.0) };
            }
            for c in set.constraints() {
                lp.add(c.to_lp(n));
            }
            for i in (0..n).filter(|&i| i != star) {
                let mut row = vec![0.0; n];
                row[i] = -(x + deltas.delta[i]);
                row[star] = slope_star;
                lp.add(Constraint::le(row, -deltas.pair(i, star)));
            }
            Ok(StarProgram { lp, map: CoverageMap::Direct, offset })
        }
        Formulation::Grid | Formulation::Auto => {
            let pairs = game.allowed_pairs();
            let nv = pairs.len();
            let mut lp = LinearProgram::new(nv);
            let mut by_target = vec![Vec::new(); n];
            let mut by_resource = vec![Vec::new(); game.n_resources()];
            for (v, &(j, i)) in pairs.iter().enumerate() {
                by_target[i].push(v);
                by_resource[j].push(v);
                if i == star {
                    lp.objective[v] = gain;
                }
            }
            let sum_row = |vars: &[usize]| {
                let mut row = vec![0.0; nv];
                for &v in vars {
                    row[v] = 1.0;
                }
                row
            };
            for vars in by_target.iter().filter(|v| !v.is_empty()) {
                lp.add(Constraint::le(sum_row(vars), 1.0));
            }
            for vars in by_resource.iter().filter(|v| !v.is_empty()) {
                lp.add(Constraint::le(sum_row(vars), 1.0));
            }
            for i in (0..n).filter(|&i| i != star) {
                let mut row = vec![0.0; nv];
                for &v in &by_target[i] {
                    row[v] = -(x + deltas.delta[i]);
                }
                for &v in &by_target[star] {
                    row[v] = slope_star;
                }
                lp.add(Constraint::le(row, -deltas.pair(i, star)));
            }
            Ok(StarProgram { lp, map: CoverageMap::Pairs(pairs), offset })
        }
    }
}

/// Result of one (star, x) program.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramResult {
    pub star: usize,
    pub x: f64,
    /// `None` when infeasible.
    pub objective: Option<f64>,
    pub p: Vec<f64>,
}

pub fn solve_star_program(
    game: &AuditGame,
    deltas: &DeltaTable,
    star: usize,
    x: f64,
    a1: f64,
    formulation: Formulation,
    constraints: Option<&ConstraintSet>,
) -> Result<ProgramResult, SolveError> {
    let prog = build_program(game, deltas, star, x, a1, formulation, constraints)?;
    let out = solve_lp(&prog.lp)?;
    match out.status {
        LpStatus::Optimal => Ok(ProgramResult {
            star,
            x,
            objective: Some(out.objective_value + prog.offset),
            p: prog.coverage(game.n_targets(), &out.solution),
        }),
        LpStatus::Infeasible => Ok(ProgramResult { star, x, objective: None, p: Vec::new() }),
        LpStatus::Unbounded => Err(SolveError::Lp(LpError::NumericalBreakdown(format!(
            "bounded program for star {star} at x = {x} reported unbounded"
        )))),
    }
}

/// True when `a` beats `b` under the tie-break rule: larger objective, then
/// smaller x, then smaller star.
pub(crate) fn better(a: (f64, f64, usize), b: (f64, f64, usize)) -> bool {
    if a.0 > b.0 + TIE_TOL {
        return true;
    }
    if a.0 < b.0 - TIE_TOL {
        return false;
    }
    if a.1 != b.1 {
        return a.1 < b.1;
    }
    a.2 < b.2
}

/// Extracts and optionally prunes the coverage constraints.
pub fn prepare_constraints(game: &AuditGame, cfg: &SolveConfig) -> Result<ConstraintSet, SolveError> {
    let mut set = constraint_find(game, cfg.enumeration_cap)?;
    if cfg.prune_constraints {
        set.prune_redundant()?;
    }
    Ok(set)
}

/// Resolves `Auto` and extracts constraints when the transformed formulation
/// is used.
pub fn resolve_formulation(
    game: &AuditGame,
    cfg: &SolveConfig,
) -> Result<(Formulation, Option<ConstraintSet>, Option<String>), SolveError> {
    match cfg.formulation {
        Formulation::Grid => Ok((Formulation::Grid, None, None)),
        Formulation::Transformed => Ok((Formulation::Transformed, Some(prepare_constraints(game, cfg)?), None)),
        Formulation::Auto => {
            let g = build_intersection_graph(&merge_targets(game));
            let report = tractability_check(&g, game.n_targets(), &TractabilityThresholds::default());
            match prepare_constraints(game, cfg) {
                Ok(set) => Ok((Formulation::Transformed, Some(set), None)),
                Err(SolveError::Extract(ExtractError::EnumerationCapExceeded { count })) => {
                    let why = format!(
                        "subgraph enumeration exceeded {count} (graph: {} nodes, max degree {}); using grid",
                        report.nodes, report.max_degree
                    );
                    log::info!("{why}");
                    Ok((Formulation::Grid, None, Some(why)))
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Best solution over every star and every punishment on the `epsilon` grid.
pub fn solve_fpt(game: &AuditGame, cfg: &SolveConfig) -> Result<SolveOutput, SolveError> {
    cfg.validate()?;
    let (form, set, fallback) = resolve_formulation(game, cfg)?;
    let deltas = compute_deltas(game);
    let xs = unit_grid(cfg.epsilon);
    let a1 = cfg.a1(game);

    let run_star = |star: usize| -> Result<(Option<ProgramResult>, usize, usize), SolveError> {
        let mut best: Option<ProgramResult> = None;
        let mut infeasible = 0;
        for &x in &xs {
            let r = solve_star_program(game, &deltas, star, x, a1, form, set.as_ref())?;
            let Some(obj) = r.objective else {
                infeasible += 1;
                continue;
            };
            let take = match &best {
                None => true,
                Some(b) => better((obj, x, star), (b.objective.unwrap(), b.x, b.star)),
            };
            if take {
                best = Some(r);
            }
        }
        Ok((best, xs.len(), infeasible))
    };
    let per_star: Vec<_> = if cfg.parallel {
        (0..game.n_targets()).into_par_iter().map(run_star).collect::<Result<_, _>>()?
    } else {
        (0..game.n_targets()).map(run_star).collect::<Result<_, _>>()?
    };

    let mut stats = SolveStats {
        constraint_count: set.as_ref().map(|s| s.len()),
        fallback_reason: fallback,
        ..Default::default()
    };
    let mut best: Option<ProgramResult> = None;
    for (b, solved, infeasible) in per_star {
        stats.programs_solved += solved;
        stats.infeasible_programs += infeasible;
        if let Some(b) = b {
            let take = match &best {
                None => true,
                Some(cur) => better((b.objective.unwrap(), b.x, b.star), (cur.objective.unwrap(), cur.x, cur.star)),
            };
            if take {
                best = Some(b);
            }
        }
    }
    let best = best.ok_or(SolveError::AllProgramsInfeasible)?;
    stats.guarantee_applies = deltas.delta[best.star] > 0.0 || best.x > cfg.epsilon;
    if !stats.guarantee_applies {
        log::info!("best punishment is near zero and the star's attacker gap is zero; additive bound not claimed");
    }
    let solution = CoverageSolution {
        p: best.p,
        x: best.x,
        x_per_target: None,
        objective: best.objective.unwrap(),
        star: best.star,
        formulation: form,
        method: Method::Fpt,
    };
    Ok(SolveOutput { solution, stats })
}

/// Residuals of a solution against the full program.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Residuals {
    /// Largest amount by which another target beats the star for the attacker.
    pub best_response: f64,
    /// Largest box violation of `p` or the punishment rate(s).
    pub bounds: f64,
    /// Coverage that cannot be routed through the allocation grid.
    pub grid_lift: f64,
    /// Largest violation of the extracted constraints, when supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint_set: Option<f64>,
    /// |reported objective - recomputed defender utility|.
    pub objective: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.best_response
            .max(self.bounds)
            .max(self.grid_lift)
            .max(self.constraint_set.unwrap_or(0.0))
            .max(self.objective)
    }

    pub fn ok(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Recomputes every constraint of the star's program at the solution.
pub fn verify_solution(
    game: &AuditGame,
    sol: &CoverageSolution,
    constraints: Option<&ConstraintSet>,
) -> Result<Residuals, SolveError> {
    let pay = sol.attacker_payoffs(game);
    let best_response = pay.iter().map(|&u| u - pay[sol.star]).fold(0.0, f64::max);
    let mut bounds = sol.p.iter().map(|&v| (-v).max(v - 1.0)).fold(0.0, f64::max);
    let xs: Vec<f64> = match &sol.x_per_target {
        Some(v) => v.clone(),
        None => vec![sol.x],
    };
    bounds = xs.iter().map(|&v| (-v).max(v - 1.0)).fold(bounds, f64::max);
    let grid_lift = lift_deficit(game, &sol.p)?;
    let constraint_set = constraints.map(|c| c.max_violation(&sol.p).max(0.0));
    let recomputed = match &sol.x_per_target {
        Some(xv) => {
            let costs = game.effective_target_costs();
            let t = game.target(sol.star);
            t.ud_unaudited + sol.p[sol.star] * (t.ud_audited - t.ud_unaudited)
                - costs.iter().zip(xv).map(|(a, x)| a * x).sum::<f64>()
        }
        None => game.defender_utility(sol.star, sol.p[sol.star], sol.x),
    };
    Ok(Residuals {
        best_response,
        bounds: bounds.max(0.0),
        grid_lift,
        constraint_set,
        objective: (recomputed - sol.objective).abs(),
    })
}

/// Per-formulation timings and agreement for one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormulationComparison {
    pub transformed_secs: f64,
    pub grid_secs: f64,
    pub extraction_secs: f64,
    pub include_extraction: bool,
    pub objective_transformed: f64,
    pub objective_grid: f64,
    /// Largest |obj_T - obj_NT| over all (x, star) programs, counting a
    /// feasibility mismatch as infinite.
    pub max_pointwise_gap: f64,
    pub programs: usize,
    pub constraint_count: usize,
    /// grid time / transformed time.
    pub speedup: f64,
}

/// Runs the full grid of programs in both formulations, single-threaded,
/// timing each.
pub fn compare_formulations(
    game: &AuditGame,
    cfg: &SolveConfig,
    include_extraction: bool,
) -> Result<FormulationComparison, SolveError> {
    cfg.validate()?;
    let deltas = compute_deltas(game);
    let xs = unit_grid(cfg.epsilon);
    let a1 = cfg.a1(game);
    let n = game.n_targets();

    let t0 = Instant::now();
    let set = prepare_constraints(game, cfg)?;
    let extraction = t0.elapsed();

    let run = |form: Formulation, set: Option<&ConstraintSet>| -> Result<(Vec<Option<f64>>, Duration), SolveError> {
        let start = Instant::now();
        let mut objs = Vec::with_capacity(n * xs.len());
        for star in 0..n {
            for &x in &xs {
                objs.push(solve_star_program(game, &deltas, star, x, a1, form, set)?.objective);
            }
        }
        Ok((objs, start.elapsed()))
    };
    let (obj_t, time_t) = run(Formulation::Transformed, Some(&set))?;
    let (obj_g, time_g) = run(Formulation::Grid, None)?;

    let mut gap = 0.0f64;
    for (a, b) in obj_t.iter().zip(&obj_g) {
        gap = gap.max(match (a, b) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        });
    }
    let best = |v: &[Option<f64>]| v.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_secs = time_t.as_secs_f64() + if include_extraction { extraction.as_secs_f64() } else { 0.0 };
    let g_secs = time_g.as_secs_f64();
    Ok(FormulationComparison {
        transformed_secs: t_secs,
        grid_secs: g_secs,
        extraction_secs: extraction.as_secs_f64(),
        include_extraction,
        objective_transformed: best(&obj_t),
        objective_grid: best(&obj_g),
        max_pointwise_gap: gap,
        programs: obj_t.len(),
        constraint_count: set.len(),
        speedup: if t_secs > 0.0 { g_secs / t_secs } else { f64::INFINITY },
    })
}
