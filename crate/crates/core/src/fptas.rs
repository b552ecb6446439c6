//! Approximation scheme for the continuous punishment rate.
//!
//! For a fixed best-response target (the star), every other target's
//! coverage is either tied to `(p, x)` through its tight best-response row or
//! pinned to zero, depending on which hyperbolic band `(p, x)` lies in. Inside
//! a band the program collapses to two variables with rational boundaries
//! `p <= f_b(x)`; the optimum sits on a boundary, at an intersection of two
//! boundaries or at a corner, so it is found by root isolation.

use rayon::prelude::*;
use serde::Serialize;

use crate::constraints::ConstraintSet;
use crate::fpt::{
    better, prepare_constraints, solve_star_program, verify_solution, CoverageSolution, Formulation, Method,
    SolveConfig, SolveError, SolveStats, VERIFY_TOL,
};
use crate::model::{compute_deltas, AuditGame, DeltaTable};
use crate::poly::{isolate_roots, PolyError, Polynomial, RationalFn};

/// Tolerance for sitting on the open lower hyperbola of a band.
pub const OPEN_BOUNDARY_TOL: f64 = 1e-9;
// Relative slack when testing a cleared boundary at a candidate.
const BOUNDARY_TOL: f64 = 1e-10;
// Below this (relative) a boundary's p-coefficient is treated as vanishing.
const COEFF_TOL: f64 = 1e-13;
const CHOP_TOL: f64 = 1e-12;

/// Where a boundary of a band subproblem came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum BoundaryOrigin {
    /// `p_i <= 1` for an active target.
    UnitCap(usize),
    /// `p_i >= 0` for an active target whose denominator can turn negative.
    NonNegative(usize),
    /// `p (x + Delta_star) + delta_(j+1) >= 0`.
    BandUpper,
    /// Closed form of the strict `p (x + Delta_star) + delta_(j) < 0`.
    BandLower,
    /// Coverage constraint, by index into the constraint set; pinned targets
    /// follow the constraints.
    Coverage(usize),
}

/// `(a(x) p + b(x)) / mult(x) <= 0`. Where `mult` is positive this is the
/// cleared form `a p + b <= 0`, and for `a > 0` it reads `p <= f(x) = -b / a`.
#[derive(Clone, Debug, PartialEq)]
pub struct Boundary {
    pub a: Polynomial,
    pub b: Polynomial,
    pub mult: Polynomial,
    pub origin: BoundaryOrigin,
}

impl Boundary {
    fn new(a: Polynomial, b: Polynomial, mult: Polynomial, origin: BoundaryOrigin) -> Self {
        Self { a, b, mult, origin }
    }

    /// The boundary as `p <= f_b(x)`.
    pub fn bound_fn(&self) -> Option<RationalFn> {
        if self.a.is_zero() {
            None
        } else {
            Some(RationalFn::new(-&self.b, self.a.clone()))
        }
    }

    /// Oriented coefficients `(a, b)` at `x`, sign-corrected by the multiplier.
    fn at(&self, x: f64) -> (f64, f64) {
        let (a, b) = (self.a.eval(x), self.b.eval(x));
        if self.mult.eval(x) < 0.0 {
            (-a, -b)
        } else {
            (a, b)
        }
    }

    fn scale(&self, x: f64) -> f64 {
        let (a, b) = self.at(x);
        1.0 + a.abs() + b.abs()
    }

    /// Signed violation of the cleared constraint at `(p, x)`, relative to
    /// the coefficient scale.
    pub fn violation(&self, p: f64, x: f64) -> f64 {
        let (a, b) = self.at(x);
        (a * p + b) / self.scale(x)
    }
}

/// One band of one star's program.
#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemEQ {
    pub star: usize,
    /// Number of sorted targets pinned to zero.
    pub j: usize,
    /// Targets with coverage tied to `(p, x)`, in sorted order.
    pub active: Vec<usize>,
    /// Targets pinned to zero.
    pub zeroed: Vec<usize>,
    pub boundaries: Vec<Boundary>,
    /// Index of the closed lower hyperbola in `boundaries` (absent for `j = 0`).
    pub open_lower: Option<usize>,
    /// `Delta_D` of the star.
    pub gain: f64,
    pub a1: f64,
    pub cost_a: f64,
    /// Defender utility at the star when it is not audited.
    pub offset: f64,
    delta_star: f64,
    /// `(Delta_i, delta_{i,star})` for every target.
    coeffs: Vec<(f64, f64)>,
}

impl SubproblemEQ {
    pub fn objective(&self, p: f64, x: f64) -> f64 {
        self.offset + p * (self.gain - self.a1 * x) - self.cost_a * x
    }

    /// `p (x + Delta_star) + delta_{i,star}`.
    pub fn hyperbola(&self, i: usize, p: f64, x: f64) -> f64 {
        p * (x + self.delta_star) + self.coeffs[i].1
    }

    /// Coverage of every target implied by `(p, x)` inside this band.
    pub fn coverage(&self, p: f64, x: f64) -> Vec<f64> {
        let mut cov = vec![0.0; self.coeffs.len()];
        cov[self.star] = p;
        for &i in &self.active {
            let den = x + self.coeffs[i].0;
            cov[i] = if den.abs() <= 1e-15 { 0.0 } else { (self.hyperbola(i, p, x) / den).clamp(0.0, 1.0) };
        }
        cov
    }

    /// Whether `(p, x)` lies in this band under the half-open convention
    /// (lower hyperbola strict, upper closed), tested exactly.
    pub fn in_band(&self, p: f64, x: f64) -> bool {
        let lower_ok = self.zeroed.last().is_none_or(|&i| self.hyperbola(i, p, x) < 0.0);
        let upper_ok = self.active.first().is_none_or(|&i| self.hyperbola(i, p, x) >= 0.0);
        lower_ok && upper_ok
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Corner,
    /// Stationary point of the objective along a boundary.
    SingleBoundary { b: usize },
    Intersection { b: usize, b2: usize },
    /// Boundary crossing `p = 0` or `p = 1`.
    Crossing { b: usize },
    /// Zero of a boundary's p-coefficient or multiplier.
    Pole { b: usize },
    /// Point where the `a1` term flips the sign of the star's gain.
    GainSign,
    /// Exact fixed-x program over all bands.
    FixedX,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CandidatePoint {
    pub p_n: f64,
    pub x: f64,
    pub objective: f64,
    pub provenance: Provenance,
    pub feasible: bool,
    pub on_open_boundary: bool,
}

impl CandidatePoint {
    fn at_x(x: f64, provenance: Provenance) -> Self {
        Self { p_n: 0.0, x, objective: f64::NEG_INFINITY, provenance, feasible: false, on_open_boundary: false }
    }
}

/// Targets other than `star`, stably sorted by ascending `delta_{i,star}`.
pub fn sort_deltas(game: &AuditGame, star: usize) -> Vec<usize> {
    let d = compute_deltas(game);
    sorted_others(&d, star)
}

fn sorted_others(d: &DeltaTable, star: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.delta.len()).filter(|&i| i != star).collect();
    order.sort_by(|&a, &b| d.pair(a, star).total_cmp(&d.pair(b, star)));
    order
}

/// Builds band `j` of `star`'s program: the first `j` targets in δ order
/// are pinned to zero, the rest follow their tight best-response rows.
pub fn build_subproblem(
    game: &AuditGame,
    star: usize,
    j: usize,
    set: &ConstraintSet,
    a1: f64,
) -> Result<SubproblemEQ, SolveError> {
    let d = compute_deltas(game);
    build_band(game, &d, &sorted_others(&d, star), star, j, set, a1)
}

fn build_band(
    game: &AuditGame,
    d: &DeltaTable,
    order: &[usize],
    star: usize,
    j: usize,
    set: &ConstraintSet,
    a1: f64,
) -> Result<SubproblemEQ, SolveError> {
    if j > order.len() {
        return Err(SolveError::Config(format!("band {j} out of range for {} other targets", order.len())));
    }
    let n = game.n_targets();
    let coeffs: Vec<(f64, f64)> = (0..n).map(|i| (d.delta[i], d.pair(i, star))).collect();
    let zeroed = order[..j].to_vec();
    let active = order[j..].to_vec();
    let mut is_active = vec![false; n];
    active.iter().for_each(|&i| is_active[i] = true);

    let slope = Polynomial::linear(d.delta[star], 1.0);
    let one = Polynomial::constant(1.0);
    // h_i(p, x) = slope * p + delta_i.
    let den = |i: usize| Polynomial::linear(coeffs[i].0, 1.0);
    let mut boundaries = Vec::new();

    for &i in &active {
        // h_i <= x + Delta_i.
        boundaries.push(Boundary::new(
            slope.clone(),
            Polynomial::constant(coeffs[i].1) - den(i),
            den(i),
            BoundaryOrigin::UnitCap(i),
        ));
        if coeffs[i].0 < 1.0 {
            // The denominator can vanish or go negative on [0, 1], so the
            // implied p_i >= 0 has to be stated.
            boundaries.push(Boundary::new(
                -&slope,
                Polynomial::constant(-coeffs[i].1),
                den(i),
                BoundaryOrigin::NonNegative(i),
            ));
        }
    }
    if let Some(&i) = active.first() {
        boundaries.push(Boundary::new(-&slope, Polynomial::constant(-coeffs[i].1), one.clone(), BoundaryOrigin::BandUpper));
    }
    let open_lower = zeroed.last().map(|&i| {
        boundaries.push(Boundary::new(slope.clone(), Polynomial::constant(coeffs[i].1), one.clone(), BoundaryOrigin::BandLower));
        boundaries.len() - 1
    });

    let pins = set.pinned_zero().iter().map(|&i| (vec![i], 0usize));
    let rows = set.constraints().iter().map(|c| (c.targets.clone(), c.bound)).chain(pins);
    for (idx, (targets, bound)) in rows.enumerate() {
        let has_star = targets.contains(&star);
        let members: Vec<usize> = targets.iter().copied().filter(|&i| is_active[i]).collect();
        if !has_star && members.is_empty() {
            // Only zeroed targets: 0 <= bound.
            continue;
        }
        let mult = members.iter().fold(one.clone(), |m, &i| &m * &den(i));
        let mut a = if has_star { mult.clone() } else { Polynomial::zero() };
        let mut b = -&mult.scale(bound as f64);
        for (k, &i) in members.iter().enumerate() {
            let others = members
                .iter()
                .enumerate()
                .filter(|&(k2, _)| k2 != k)
                .fold(one.clone(), |m, (_, &i2)| &m * &den(i2));
            a = &a + &(&slope * &others);
            b = &b + &others.scale(coeffs[i].1);
        }
        boundaries.push(Boundary::new(a, b, mult, BoundaryOrigin::Coverage(idx)));
    }

    Ok(SubproblemEQ {
        star,
        j,
        active,
        zeroed,
        boundaries,
        open_lower,
        gain: d.delta_d[star],
        a1,
        cost_a: game.cost_a(),
        offset: game.target(star).ud_unaudited,
        delta_star: d.delta[star],
        coeffs,
    })
}

/// Clamps each candidate's `x` into `[0, 1]` and sets `p_n` to the best
/// feasible value at that `x`: the smallest upper bound when the star's gain
/// is nonnegative, the largest lower bound otherwise. Candidates with no
/// feasible `p_n`, or whose `p_n` lands on the open lower hyperbola, are
/// marked infeasible.
pub fn make_feasible(candidates: &[CandidatePoint], eq: &SubproblemEQ) -> Vec<CandidatePoint> {
    candidates.iter().map(|c| project(c, eq)).collect()
}

fn project(c: &CandidatePoint, eq: &SubproblemEQ) -> CandidatePoint {
    let x = if c.x.is_nan() { 0.0 } else { c.x.clamp(0.0, 1.0) };
    let mut out = CandidatePoint::at_x(x, c.provenance);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for b in &eq.boundaries {
        let (a, bb) = b.at(x);
        let s = b.scale(x);
        if a > COEFF_TOL * s {
            hi = hi.min(-bb / a);
        } else if a < -COEFF_TOL * s {
            lo = lo.max(-bb / a);
        } else if bb > BOUNDARY_TOL * s {
            return out;
        }
    }
    if lo > hi {
        if lo - hi > BOUNDARY_TOL {
            return out;
        }
        hi = lo;
    }
    let p = if eq.gain - eq.a1 * x >= 0.0 { hi } else { lo };
    if eq.boundaries.iter().any(|b| b.violation(p, x) > BOUNDARY_TOL) {
        return out;
    }
    out.p_n = p;
    out.objective = eq.objective(p, x);
    out.on_open_boundary = eq.open_lower.is_some_and(|k| eq.boundaries[k].at(x).0 * p + eq.boundaries[k].at(x).1 >= -OPEN_BOUNDARY_TOL);
    out.feasible = !out.on_open_boundary;
    out
}

/// Best candidate of one band, with the number of candidates evaluated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandOutcome {
    pub best: Option<CandidatePoint>,
    pub candidates: usize,
}

fn push_roots(
    poly: &Polynomial,
    l: u32,
    prov: Provenance,
    out: &mut Vec<CandidatePoint>,
) -> Result<(), SolveError> {
    let poly = poly.chop(CHOP_TOL);
    if poly.degree() == 0 {
        return Ok(());
    }
    let roots = match isolate_roots(&poly, (0.0, 1.0), l) {
        Ok(r) => r,
        Err(PolyError::ZeroPolynomial) => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    for r in roots {
        // Both ends of the enclosure, so that at least one lies on the
        // feasible side of the true root.
        for x in [r.value - r.radius, r.value, r.value + r.radius] {
            out.push(CandidatePoint::at_x(x, prov));
        }
    }
    Ok(())
}

/// Raw x-candidates of a band before projection.
fn band_candidates(eq: &SubproblemEQ, l: u32) -> Result<Vec<CandidatePoint>, SolveError> {
    let mut out = vec![CandidatePoint::at_x(0.0, Provenance::Corner), CandidatePoint::at_x(1.0, Provenance::Corner)];
    if eq.a1 > 0.0 {
        let x = eq.gain / eq.a1;
        if x > 0.0 && x < 1.0 {
            out.push(CandidatePoint::at_x(x, Provenance::GainSign));
        }
    }
    let c = Polynomial::linear(eq.gain, -eq.a1);
    for (k, bd) in eq.boundaries.iter().enumerate() {
        let (a, b) = (&bd.a, &bd.b);
        // d/dx [ -b/a * c - cost x ] = 0, multiplied through by a^2.
        let stationary = &(&(a * b).scale(eq.a1) - &(&c * &(&(&b.derivative() * a) - &(b * &a.derivative()))))
            - &(a * a).scale(eq.cost_a);
        push_roots(&stationary, l, Provenance::SingleBoundary { b: k }, &mut out)?;
        push_roots(b, l, Provenance::Crossing { b: k }, &mut out)?;
        push_roots(&(a + b), l, Provenance::Crossing { b: k }, &mut out)?;
        push_roots(a, l, Provenance::Pole { b: k }, &mut out)?;
        push_roots(&bd.mult, l, Provenance::Pole { b: k }, &mut out)?;
    }
    for k in 0..eq.boundaries.len() {
        for k2 in k + 1..eq.boundaries.len() {
            let (p, q) = (&eq.boundaries[k], &eq.boundaries[k2]);
            let diff = &(&p.b * &q.a) - &(&q.b * &p.a);
            push_roots(&diff, l, Provenance::Intersection { b: k, b2: k2 }, &mut out)?;
        }
    }
    Ok(out)
}

/// Solves one band: corners, stationary points along every boundary and
/// pairwise boundary intersections, each projected by [`make_feasible`].
pub fn apx_solve(eq: &SubproblemEQ, l: u32) -> Result<BandOutcome, SolveError> {
    let raw = band_candidates(eq, l)?;
    let projected = make_feasible(&raw, eq);
    let mut best: Option<CandidatePoint> = None;
    for c in projected.iter().filter(|c| c.feasible) {
        let take = match &best {
            None => true,
            Some(b) => better((c.objective, c.x, 0), (b.objective, b.x, 0)),
        };
        if take {
            best = Some(*c);
        }
    }
    Ok(BandOutcome { best, candidates: raw.len() })
}

/// Expands a band optimum into a full coverage vector. Falls back to the
/// exact fixed-x program when the substituted vector misses verification.
pub fn recover_full_solution(
    game: &AuditGame,
    set: &ConstraintSet,
    eq: &SubproblemEQ,
    p_n: f64,
    x: f64,
) -> Result<CoverageSolution, SolveError> {
    let sol = CoverageSolution {
        p: eq.coverage(p_n, x),
        x,
        x_per_target: None,
        objective: eq.objective(p_n, x),
        star: eq.star,
        formulation: Formulation::Transformed,
        method: Method::Fptas,
    };
    let res = verify_solution(game, &sol, Some(set))?;
    if res.ok(VERIFY_TOL) {
        return Ok(sol);
    }
    log::debug!("substituted coverage misses verification ({:e}); re-solving at x = {x}", res.max());
    let d = compute_deltas(game);
    let r = solve_star_program(game, &d, eq.star, x, eq.a1, Formulation::Transformed, Some(set))?;
    match r.objective {
        Some(obj) if obj >= sol.objective - VERIFY_TOL => Ok(CoverageSolution { p: r.p, objective: obj, ..sol }),
        _ => Err(SolveError::VerificationFailed(format!(
            "band {} of star {} at x = {x}: residual {:e}",
            eq.j,
            eq.star,
            res.max()
        ))),
    }
}

/// Per-band result for reporting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandWinner {
    pub star: usize,
    /// `None` for the exact fixed-x programs at `x = 0` and `x = 1`.
    pub band: Option<usize>,
    pub boundaries: usize,
    pub candidates: usize,
    pub winner: Option<CandidatePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FptasOutput {
    pub solution: CoverageSolution,
    pub stats: SolveStats,
    /// Largest boundary count over all bands.
    pub max_boundaries: usize,
    pub bands: Vec<BandWinner>,
}

struct StarRun {
    bands: Vec<BandWinner>,
    best: Option<(CandidatePoint, Option<SubproblemEQ>, Option<Vec<f64>>)>,
    programs: usize,
    infeasible: usize,
}

fn run_star(
    game: &AuditGame,
    d: &DeltaTable,
    set: &ConstraintSet,
    star: usize,
    a1: f64,
    l: u32,
) -> Result<StarRun, SolveError> {
    let order = sorted_others(d, star);
    let mut run = StarRun { bands: Vec::new(), best: None, programs: 0, infeasible: 0 };
    let consider = |c: CandidatePoint, eq: Option<SubproblemEQ>, p: Option<Vec<f64>>, run: &mut StarRun| {
        let take = match &run.best {
            None => true,
            Some((b, _, _)) => better((c.objective, c.x, star), (b.objective, b.x, star)),
        };
        if take {
            run.best = Some((c, eq, p));
        }
    };
    for x in [0.0, 1.0] {
        let r = solve_star_program(game, d, star, x, a1, Formulation::Transformed, Some(set))?;
        run.programs += 1;
        let winner = r.objective.map(|obj| CandidatePoint {
            p_n: r.p[star],
            x,
            objective: obj,
            provenance: Provenance::FixedX,
            feasible: true,
            on_open_boundary: false,
        });
        match winner {
            Some(c) => consider(c, None, Some(r.p), &mut run),
            None => run.infeasible += 1,
        }
        run.bands.push(BandWinner { star, band: None, boundaries: 0, candidates: 1, winner });
    }
    for j in 0..=order.len() {
        let eq = build_band(game, d, &order, star, j, set, a1)?;
        let out = apx_solve(&eq, l)?;
        run.programs += 1;
        run.bands.push(BandWinner {
            star,
            band: Some(j),
            boundaries: eq.boundaries.len(),
            candidates: out.candidates,
            winner: out.best,
        });
        match out.best {
            Some(c) => consider(c, Some(eq), None, &mut run),
            None => run.infeasible += 1,
        }
    }
    Ok(run)
}

/// Best point over every star and every band.
pub fn solve_fptas(game: &AuditGame, cfg: &SolveConfig) -> Result<FptasOutput, SolveError> {
    cfg.validate()?;
    let set = prepare_constraints(game, cfg)?;
    let d = compute_deltas(game);
    let a1 = cfg.a1(game);
    let l = cfg.root_bits;
    let runs: Vec<StarRun> = if cfg.parallel {
        (0..game.n_targets()).into_par_iter().map(|s| run_star(game, &d, &set, s, a1, l)).collect::<Result<_, _>>()?
    } else {
        (0..game.n_targets()).map(|s| run_star(game, &d, &set, s, a1, l)).collect::<Result<_, _>>()?
    };

    let mut stats = SolveStats { constraint_count: Some(set.len()), guarantee_applies: true, ..Default::default() };
    let mut bands = Vec::new();
    let mut best: Option<(usize, CandidatePoint, Option<SubproblemEQ>, Option<Vec<f64>>)> = None;
    for (star, run) in runs.into_iter().enumerate() {
        stats.programs_solved += run.programs;
        stats.infeasible_programs += run.infeasible;
        bands.extend(run.bands);
        if let Some((c, eq, p)) = run.best {
            let take = match &best {
                None => true,
                Some((s, b, _, _)) => better((c.objective, c.x, star), (b.objective, b.x, *s)),
            };
            if take {
                best = Some((star, c, eq, p));
            }
        }
    }
    let (star, c, eq, p) = best.ok_or(SolveError::AllProgramsInfeasible)?;
    let solution = match (eq, p) {
        (Some(eq), _) => recover_full_solution(game, &set, &eq, c.p_n, c.x)?,
        (None, Some(p)) => CoverageSolution {
            p,
            x: c.x,
            x_per_target: None,
            objective: c.objective,
            star,
            formulation: Formulation::Transformed,
            method: Method::Fptas,
        },
        (None, None) => unreachable!("winner without a source"),
    };
    let max_boundaries = bands.iter().map(|b| b.boundaries).max().unwrap_or(0);
    Ok(FptasOutput { solution, stats, max_boundaries, bands })
}
