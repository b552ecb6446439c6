//! Seeded instance generation, the formulation timing harness and the
//! multi-peak counterexample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::constraints::{ConstraintSet, CoverageConstraint, ConstraintSource};
use crate::fpt::{compare_formulations, solve_star_program, unit_grid, Formulation, FormulationComparison, SolveConfig, SolveError};
use crate::model::{compute_deltas, snap_to_bits, validate_game, AuditGame, GameError, RawInstance, RawTarget, DEFAULT_INPUT_BITS};

/// Punishment cost used by generated instances.
pub const GENERATED_COST_A: f64 = 0.01;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Divisibility(String),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub n_targets: usize,
    pub n_resources: usize,
    /// Resources per group; each group audits its own block of targets.
    pub group_size: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub repetitions: usize,
    /// Count constraint extraction in the transformed timing.
    pub include_extraction: bool,
}

impl BenchConfig {
    pub fn new(n_targets: usize, n_resources: usize, group_size: usize) -> Self {
        Self {
            n_targets,
            n_resources,
            group_size,
            epsilon: 0.05,
            seed: 0,
            repetitions: 1,
            include_extraction: false,
        }
    }

    pub fn groups(&self) -> Result<usize, BenchError> {
        let (n, k, g) = (self.n_targets, self.n_resources, self.group_size);
        if g == 0 || k % g != 0 {
            return Err(BenchError::Divisibility(format!("{k} resources do not split into groups of {g}")));
        }
        let groups = k / g;
        if n % groups != 0 {
            return Err(BenchError::Divisibility(format!("{n} targets do not split into {groups} blocks")));
        }
        Ok(groups)
    }
}

/// Random instance: utilities uniform on [0, 1] snapped to the default bit
/// precision and ordered so both utility gaps are nonnegative; resources in
/// group `g` may only audit block `g` of the targets.
pub fn generate_instance(cfg: &BenchConfig) -> Result<AuditGame, BenchError> {
    let groups = cfg.groups()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bits = DEFAULT_INPUT_BITS;
    let mut draw = || snap_to_bits(rng.gen::<f64>(), bits);
    let targets = (0..cfg.n_targets)
        .map(|_| {
            let (d1, d2, a1, a2) = (draw(), draw(), draw(), draw());
            RawTarget { ud_a: d1.max(d2), ud_u: d1.min(d2), ua_a: a1.min(a2), ua_u: a1.max(a2) }
        })
        .collect();
    let block = cfg.n_targets / groups;
    let mut restrictions = Vec::new();
    for j in 0..cfg.n_resources {
        let g = j / cfg.group_size;
        for i in 0..cfg.n_targets {
            if i / block != g {
                restrictions.push([j, i]);
            }
        }
    }
    let raw = RawInstance {
        targets,
        resources: cfg.n_resources,
        restrictions,
        a: GENERATED_COST_A,
        a1: 0.0,
        a_vec: None,
        input_bits: bits,
        allow_order_violations: false,
    };
    Ok(validate_game(&raw)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Self {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { mean, min, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub transformed_secs: Summary,
    pub grid_secs: Summary,
    pub extraction_secs: Summary,
    /// Mean grid time over mean transformed time.
    pub speedup: f64,
    pub max_pointwise_gap: f64,
    pub objectives_agree: bool,
    pub programs_per_run: usize,
    pub constraint_count: usize,
    pub runs: Vec<FormulationComparison>,
}

/// Pointwise agreement required between the two formulations.
pub const AGREEMENT_TOL: f64 = 1e-6;

/// Times both formulations on the generated instance, single-threaded.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    let game = generate_instance(cfg)?;
    let solve_cfg = SolveConfig { epsilon: cfg.epsilon, parallel: false, ..SolveConfig::default() };
    let mut runs = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let r = compare_formulations(&game, &solve_cfg, cfg.include_extraction)?;
        log::info!(
            "run {}: transformed {:.3}s, grid {:.3}s, gap {:e}",
            rep + 1,
            r.transformed_secs,
            r.grid_secs,
            r.max_pointwise_gap
        );
        runs.push(r);
    }
    let pick = |f: fn(&FormulationComparison) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
    let t = pick(|r| r.transformed_secs);
    let g = pick(|r| r.grid_secs);
    let max_gap = runs.iter().map(|r| r.max_pointwise_gap).fold(0.0, f64::max);
    Ok(BenchReport {
        config: cfg.clone(),
        transformed_secs: t,
        grid_secs: g,
        extraction_secs: pick(|r| r.extraction_secs),
        speedup: if t.mean > 0.0 { g.mean / t.mean } else { f64::INFINITY },
        max_pointwise_gap: max_gap,
        objectives_agree: max_gap <= AGREEMENT_TOL,
        programs_per_run: runs[0].programs,
        constraint_count: runs[0].constraint_count,
        runs,
    })
}

/// Utility rows `(ud_a, ud_u, ua_a, ua_u)` of the published seven-target
/// counterexample. Row 7 has `ua_a > ua_u`.
pub const COUNTEREXAMPLE_ROWS: [[f64; 4]; 7] = [
    [0.614, 0.598, 0.202, 0.287],
    [0.719, 0.036, 0.869, 0.999],
    [0.664, 0.063, 0.597, 0.946],
    [0.440, 0.322, 0.023, 0.624],
    [0.154, 0.098, 0.899, 0.902],
    [0.507, 0.170, 0.452, 0.629],
    [0.662, 0.371, 1.000, 0.999],
];
/// Target whose best-response program is traced (zero-based).
pub const COUNTEREXAMPLE_STAR: usize = 6;
pub const COUNTEREXAMPLE_COST_A: f64 = 0.01;
/// The table's decimals, read as doubles, are exact multiples of 2^-58.
pub const COUNTEREXAMPLE_BITS: u32 = 60;

pub fn counterexample_raw() -> RawInstance {
    RawInstance {
        targets: COUNTEREXAMPLE_ROWS
            .iter()
            .map(|r| RawTarget { ud_a: r[0], ud_u: r[1], ua_a: r[2], ua_u: r[3] })
            .collect(),
        resources: 1,
        restrictions: Vec::new(),
        a: COUNTEREXAMPLE_COST_A,
        a1: 0.0,
        a_vec: None,
        input_bits: COUNTEREXAMPLE_BITS,
        allow_order_violations: true,
    }
}

pub fn counterexample_game() -> AuditGame {
    validate_game(&counterexample_raw()).expect("counterexample instance is valid under the lenient ordering policy")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    /// Objective of the traced star's program (`None` when infeasible).
    pub star_objective: Option<f64>,
    /// Best objective over all stars at this `x`.
    pub best_objective: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Peak {
    pub x: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveReport {
    pub step: f64,
    pub star: usize,
    pub points: Vec<CurvePoint>,
    /// Strict local maxima of the traced star's curve.
    pub peaks: Vec<Peak>,
    /// Strict local maxima of the best-over-stars curve.
    pub best_peaks: Vec<Peak>,
}

/// Interior grid points strictly above both (feasible) neighbours.
pub fn strict_local_maxima(xs: &[f64], ys: &[Option<f64>]) -> Vec<Peak> {
    let mut out = Vec::new();
    for i in 1..ys.len().saturating_sub(1) {
        if let (Some(a), Some(b), Some(c)) = (ys[i - 1], ys[i], ys[i + 1]) {
            if b > a && b > c {
                out.push(Peak { x: xs[i], objective: b });
            }
        }
    }
    out
}

fn single_resource_set(n: usize) -> ConstraintSet {
    let mut set = ConstraintSet::new(n, Vec::new());
    set.insert(CoverageConstraint {
        targets: (0..n).collect(),
        bound: 1,
        source: ConstraintSource::Merged { classes: vec![0] },
    });
    set
}

/// Traces the counterexample's objective against the punishment rate.
pub fn counterexample_curve(step: f64) -> Result<CurveReport, SolveError> {
    trace_curve(&counterexample_game(), COUNTEREXAMPLE_STAR, step)
}

/// Objective of `star`'s program (and the best over all stars) at each `x`
/// on the `step` grid, for a single-resource game.
pub fn trace_curve(game: &AuditGame, star: usize, step: f64) -> Result<CurveReport, SolveError> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(SolveError::Config(format!("step must lie in (0, 0.5], got {step}")));
    }
    let n = game.n_targets();
    let set = if game.n_resources() == 1 && game.restrictions().is_empty() {
        single_resource_set(n)
    } else {
        crate::constraints::constraint_find(game, crate::constraints::DEFAULT_ENUMERATION_CAP)?
    };
    let deltas = compute_deltas(game);
    let xs = unit_grid(step);
    let mut points = Vec::with_capacity(xs.len());
    for &x in &xs {
        let mut best: Option<f64> = None;
        let mut mine = None;
        for s in 0..n {
            let r = solve_star_program(game, &deltas, s, x, game.cost_a1(), Formulation::Transformed, Some(&set))?;
            if s == star {
                mine = r.objective;
            }
            if let Some(o) = r.objective {
                best = Some(best.map_or(o, |b: f64| b.max(o)));
            }
        }
        points.push(CurvePoint { x, star_objective: mine, best_objective: best });
    }
    let ys: Vec<_> = points.iter().map(|p| p.star_objective).collect();
    let bs: Vec<_> = points.iter().map(|p| p.best_objective).collect();
    Ok(CurveReport {
        step,
        star,
        peaks: strict_local_maxima(&xs, &ys),
        best_peaks: strict_local_maxima(&xs, &bs),
        points,
    })
}

impl CurveReport {
    /// `x,objective` lines for the traced star; infeasible points are left blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,objective\n");
        for p in &self.points {
            match p.star_objective {
                Some(o) => s.push_str(&format!("{},{}\n", p.x, o)),
                None => s.push_str(&format!("{},\n", p.x)),
            }
        }
        s
    }
}
