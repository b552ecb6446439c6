//! `auditgame` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use auditgame_core::alloc::{bvn_decompose, recover_allocation, AllocError, AllocationMatrix, PureStrategyMixture};
use auditgame_core::constraints::{
    build_intersection_graph, constraint_find, extract_constraints_naive, merge_targets, tractability_check,
    ExtractError, TractabilityReport, TractabilityThresholds, DEFAULT_ENUMERATION_CAP, DEFAULT_RESOURCE_CAP,
};
use auditgame_core::experiments::{bench, counterexample_curve, counterexample_raw, generate_instance, BenchConfig, BenchError};
use auditgame_core::fpt::{
    resolve_formulation, solve_fpt, verify_solution, CoverageSolution, Formulation, Method, Residuals, SolveConfig,
    SolveError, SolveStats,
};
use auditgame_core::fptas::{solve_fptas, BandWinner};
use auditgame_core::model::{validate_game, AuditGame, GameError, RawInstance};
use auditgame_core::tsp::{solve_px, StarSweep, DEFAULT_EPSILON as TSP_EPSILON};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 2,
            _ => 1,
        }
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ExtractError> for CliError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Lp(e) => CliError::Internal(e.to_string()),
            other => CliError::Input(format!("{other}; raise --cap or use --form grid")),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::AllProgramsInfeasible => CliError::Infeasible(e.to_string()),
            SolveError::Config(m) => CliError::Usage(m),
            SolveError::Extract(e) => e.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<AllocError> for CliError {
    fn from(e: AllocError) -> Self {
        match e {
            AllocError::Infeasible { .. } | AllocError::Dimension { .. } => CliError::Input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Solve(e) => e.into(),
            BenchError::Game(e) => e.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "auditgame", version, about = "Solvers for audit games with restricted inspection resources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute a defender commitment for a game file.
    Solve(SolveArgs),
    /// Extract the coverage constraints of a game.
    Constraints(ConstraintsArgs),
    /// Turn a solve report into a mixture of pure audit assignments.
    Decompose(DecomposeArgs),
    /// Time the transformed and grid formulations on a generated instance.
    Bench(BenchArgs),
    /// Trace the published counterexample's objective against x.
    Counterexample(CounterexampleArgs),
    /// Write a generated (or the counterexample) game file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Fpt,
    Fptas,
    Tsp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormArg {
    Grid,
    Transformed,
    Auto,
}

impl From<FormArg> for Formulation {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Grid => Formulation::Grid,
            FormArg::Transformed => Formulation::Transformed,
            FormArg::Auto => Formulation::Auto,
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fpt")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "auto")]
    form: FormArg,
    /// Grid step (punishment rate for fpt, star coverage for tsp).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 20)]
    root_bits: u32,
    /// Cap on enumerated connected subgraphs.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    /// Evaluate best-response targets in parallel.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct ConstraintsArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    /// Enumerate resource subsets instead of connected subgraphs.
    #[arg(long)]
    naive: bool,
    /// Keep implied constraints.
    #[arg(long)]
    no_prune: bool,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// A report written by `solve`.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    targets: usize,
    #[arg(long, default_value_t = 100)]
    resources: usize,
    #[arg(long, default_value_t = 10)]
    group: usize,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    reps: Option<usize>,
    /// Count constraint extraction in the transformed time.
    #[arg(long)]
    include_extraction: bool,
    /// Full-fidelity settings: epsilon 0.005 and 5 repetitions.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CounterexampleArgs {
    #[arg(long, default_value_t = 0.005)]
    step: f64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also write the curve as `x,objective` CSV.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 200)]
    targets: usize,
    #[arg(long, default_value_t = 100)]
    resources: usize,
    #[arg(long, default_value_t = 10)]
    group: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the published counterexample instead of a random instance.
    #[arg(long)]
    counterexample: bool,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// Report written by `solve`. The instance is embedded so the report alone
/// is enough for `decompose`.
#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub method: Method,
    pub formulation: Formulation,
    pub star: usize,
    pub objective: f64,
    pub x: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_per_target: Option<Vec<f64>>,
    pub p: Vec<f64>,
    pub residuals: Residuals,
    pub stats: SolveStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_boundaries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<BandWinner>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stars: Option<Vec<StarSweep>>,
    pub instance: RawInstance,
}

#[derive(Debug, Deserialize)]
struct DecomposeInput {
    p: Vec<f64>,
    instance: RawInstance,
}

#[derive(Debug, Serialize)]
pub struct DecomposeReport {
    pub allocation: AllocationMatrix,
    pub mixture: PureStrategyMixture,
    pub reconstruction_error: f64,
    pub marginal_error: f64,
}

#[derive(Debug, Serialize)]
struct ConstraintRow {
    targets: Vec<usize>,
    bound: usize,
}

#[derive(Debug, Serialize)]
struct ConstraintsReport {
    n_targets: usize,
    method: &'static str,
    pruned: bool,
    count: usize,
    pinned_zero: Vec<usize>,
    constraints: Vec<ConstraintRow>,
    tractability: TractabilityReport,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source }),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError::Io { path: PathBuf::from("<stdout>"), source: e })
                }
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn load_game(path: &Path) -> Result<AuditGame, CliError> {
    Ok(AuditGame::from_json(&read(path)?)?)
}

fn check_epsilon(e: f64) -> Result<f64, CliError> {
    if e > 0.0 && e <= 0.5 {
        Ok(e)
    } else {
        Err(CliError::Usage(format!("--epsilon must lie in (0, 0.5], got {e}")))
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<(), CliError> {
    let game = load_game(&a.input)?;
    let default_eps = match a.method {
        MethodArg::Tsp => TSP_EPSILON,
        _ => SolveConfig::default().epsilon,
    };
    let cfg = SolveConfig {
        epsilon: check_epsilon(a.epsilon.unwrap_or(default_eps))?,
        formulation: a.form.into(),
        enumeration_cap: a.cap,
        root_bits: a.root_bits,
        parallel: a.parallel,
        ..SolveConfig::default()
    };
    cfg.validate()?;
    let (solution, stats, max_boundaries, bands, stars): (CoverageSolution, _, _, _, _) = match a.method {
        MethodArg::Fpt => {
            let out = solve_fpt(&game, &cfg)?;
            (out.solution, out.stats, None, None, None)
        }
        MethodArg::Fptas => {
            let out = solve_fptas(&game, &cfg)?;
            (out.solution, out.stats, Some(out.max_boundaries), Some(out.bands), None)
        }
        MethodArg::Tsp => {
            let out = solve_px(&game, &cfg)?;
            (out.solution, out.stats, None, None, Some(out.stars))
        }
    };
    let set = match solution.formulation {
        Formulation::Transformed => resolve_formulation(&game, &SolveConfig { formulation: Formulation::Transformed, ..cfg.clone() })?.1,
        _ => None,
    };
    let residuals = verify_solution(&game, &solution, set.as_ref())?;
    let report = SolveReport {
        method: solution.method,
        formulation: solution.formulation,
        star: solution.star,
        objective: solution.objective,
        x: solution.x,
        x_per_target: solution.x_per_target,
        p: solution.p,
        residuals,
        stats,
        max_boundaries,
        bands,
        stars,
        instance: game.to_raw(),
    };
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn cmd_constraints(a: &ConstraintsArgs) -> Result<(), CliError> {
    let game = load_game(&a.input)?;
    let mut set = if a.naive {
        extract_constraints_naive(&game, DEFAULT_RESOURCE_CAP)?
    } else {
        constraint_find(&game, a.cap)?
    };
    if !a.no_prune {
        set.prune_redundant().map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let g = build_intersection_graph(&merge_targets(&game));
    let report = ConstraintsReport {
        n_targets: game.n_targets(),
        method: if a.naive { "naive" } else { "connected_subgraphs" },
        pruned: !a.no_prune,
        count: set.len(),
        pinned_zero: set.pinned_zero().to_vec(),
        constraints: set.constraints().iter().map(|c| ConstraintRow { targets: c.targets.clone(), bound: c.bound }).collect(),
        tractability: tractability_check(&g, game.n_targets(), &TractabilityThresholds::default()),
    };
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn cmd_decompose(a: &DecomposeArgs) -> Result<(), CliError> {
    let input: DecomposeInput =
        serde_json::from_str(&read(&a.input)?).map_err(|e| CliError::Input(format!("not a solve report: {e}")))?;
    let game = validate_game(&input.instance)?;
    let allocation = recover_allocation(&game, &input.p)?;
    let mixture = bvn_decompose(&allocation)?;
    let rebuilt = mixture.reconstruct();
    let reconstruction_error = allocation
        .entries
        .iter()
        .zip(&rebuilt.entries)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let marginal_error =
        mixture.column_marginals().iter().zip(&input.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let report = DecomposeReport { allocation, mixture, reconstruction_error, marginal_error };
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let (eps, reps) = if a.paper_scale { (0.005, 5) } else { (0.05, 1) };
    let cfg = BenchConfig {
        epsilon: check_epsilon(a.epsilon.unwrap_or(eps))?,
        seed: a.seed,
        repetitions: a.reps.unwrap_or(reps),
        include_extraction: a.include_extraction,
        ..BenchConfig::new(a.targets, a.resources, a.group)
    };
    let report = bench(&cfg)?;
    if !report.objectives_agree {
        log::warn!("formulations disagree by {:e}", report.max_pointwise_gap);
    }
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn cmd_counterexample(a: &CounterexampleArgs) -> Result<(), CliError> {
    let report = counterexample_curve(a.step)?;
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv()).map_err(|source| CliError::Io { path: path.clone(), source })?;
    }
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let raw = if a.counterexample {
        counterexample_raw()
    } else {
        let cfg = BenchConfig { seed: a.seed, ..BenchConfig::new(a.targets, a.resources, a.group) };
        generate_instance(&cfg)?.to_raw()
    };
    emit(a.out.as_deref(), &raw.to_json())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Constraints(a) => cmd_constraints(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Counterexample(a) => cmd_counterexample(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns 0 on success, 1 on user error or infeasibility, 2 on internal
/// error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
