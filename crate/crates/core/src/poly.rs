//! Dense univariate polynomials, rational functions and certified real-root
//! isolation (Sturm counting plus bisection).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Finest supported root precision, in bits.
pub const MAX_ROOT_BITS: u32 = 40;
/// Precision above which a warning is logged; double-precision Sturm signs
/// get shaky past this point.
pub const WARN_ROOT_BITS: u32 = 30;

const SINGULAR_TOL: f64 = 1e-12;
// Relative size below which a Sturm remainder is treated as zero.
const REMAINDER_TOL: f64 = 1e-11;
// Relative distance by which an interval end sitting on a root is moved inward.
const ENDPOINT_NUDGE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("polynomial degree {degree} exceeds cap {cap}")]
    DegreeCapExceeded { degree: usize, cap: usize },
    #[error("zero polynomial has every point as a root")]
    ZeroPolynomial,
    #[error("interval ({lo}, {hi}) cannot be resolved at working precision")]
    PrecisionUnachievable { lo: f64, hi: f64 },
    #[error("denominator vanishes near x = {x}")]
    NearSingularity { x: f64 },
}

/// Polynomial with coefficients in ascending degree order. Trailing zero
/// coefficients are always trimmed, so the zero polynomial has no coefficients.
#[derive(Clone, PartialEq, Default)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial{:?}", self.coeffs)
    }
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `c0 + c1 x`.
    pub fn linear(c0: f64, c1: f64) -> Self {
        Self::new(vec![c0, c1])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Same polynomial scaled so the largest coefficient magnitude is 1.
    pub fn normalized(&self) -> Self {
        let m = self.max_abs_coeff();
        if m == 0.0 {
            Self::zero()
        } else {
            self.scale(1.0 / m)
        }
    }

    /// Drops coefficients whose magnitude is below `tol` times the largest one.
    pub fn chop(&self, tol: f64) -> Self {
        let cut = self.max_abs_coeff() * tol;
        Self::new(self.coeffs.iter().map(|&c| if c.abs() <= cut { 0.0 } else { c }).collect())
    }

    /// Euclidean division. Panics on a zero divisor.
    pub fn div_rem(&self, d: &Polynomial) -> (Polynomial, Polynomial) {
        assert!(!d.is_zero(), "division by zero polynomial");
        if self.coeffs.len() < d.coeffs.len() {
            return (Polynomial::zero(), self.clone());
        }
        let mut r = self.coeffs.clone();
        let dl = d.coeffs.len();
        let lead = d.leading();
        let mut q = vec![0.0; r.len() - dl + 1];
        for k in (0..q.len()).rev() {
            let c = r[k + dl - 1] / lead;
            q[k] = c;
            for (i, &dc) in d.coeffs.iter().enumerate() {
                r[k + i] -= c * dc;
            }
            r[k + dl - 1] = 0.0;
        }
        r.truncate(dl - 1);
        (Polynomial::new(q), Polynomial::new(r))
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::constant(1.0);
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    /// Polynomial with the given real roots and leading coefficient 1.
    pub fn from_roots(roots: &[f64]) -> Polynomial {
        roots
            .iter()
            .fold(Polynomial::constant(1.0), |acc, &r| &acc * &Polynomial::linear(-r, 1.0))
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| f(a.get(i).copied().unwrap_or(0.0), b.get(i).copied().unwrap_or(0.0)))
        .collect()
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::new(zip_with(&self.coeffs, &rhs.coeffs, |a, b| a + b))
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::new(zip_with(&self.coeffs, &rhs.coeffs, |a, b| a - b))
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolyOp {
    Add,
    Sub,
    Mul,
}

/// Checked arithmetic: fails when the result degree exceeds `cap`.
pub fn poly_arith(p: &Polynomial, q: &Polynomial, op: PolyOp, cap: usize) -> Result<Polynomial, PolyError> {
    let r = match op {
        PolyOp::Add => p + q,
        PolyOp::Sub => p - q,
        PolyOp::Mul => p * q,
    };
    if r.degree() > cap {
        return Err(PolyError::DegreeCapExceeded { degree: r.degree(), cap });
    }
    Ok(r)
}

/// Default degree cap for an instance with `n` targets.
pub fn default_degree_cap(n: usize) -> usize {
    2 * n + 4
}

/// Ratio of two polynomials.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalFn {
    pub num: Polynomial,
    pub den: Polynomial,
}

impl RationalFn {
    pub fn new(num: Polynomial, den: Polynomial) -> Self {
        assert!(!den.is_zero(), "rational function with zero denominator");
        Self { num, den }
    }

    pub fn from_poly(p: Polynomial) -> Self {
        Self::new(p, Polynomial::constant(1.0))
    }

    /// Roots of the denominator in `[lo, hi]`.
    pub fn poles_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out: Vec<f64> = match isolate_roots(&self.den, (lo, hi), 30) {
            Ok(r) => r.into_iter().map(|r| r.value).collect(),
            Err(_) => Vec::new(),
        };
        for e in [lo, hi] {
            if self.den.eval(e).abs() <= SINGULAR_TOL * self.den.max_abs_coeff().max(1.0) {
                out.push(e);
            }
        }
        out
    }
}

/// Quotient rule, returning `(num' den - num den') / den^2` without cancellation.
pub fn quotient_derivative(f: &RationalFn) -> RationalFn {
    let num = &(&f.num.derivative() * &f.den) - &(&f.num * &f.den.derivative());
    RationalFn::new(num, &f.den * &f.den)
}

pub fn eval_rational(f: &RationalFn, x: f64) -> Result<f64, PolyError> {
    let d = f.den.eval(x);
    if d.abs() <= SINGULAR_TOL * f.den.max_abs_coeff().max(1.0) {
        return Err(PolyError::NearSingularity { x });
    }
    Ok(f.num.eval(x) / d)
}

/// Approximate real root with a certified enclosure `value ± radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootApprox {
    pub value: f64,
    pub radius: f64,
    /// Whether the input polynomial changes sign across the enclosure. False
    /// for even-multiplicity roots.
    pub sign_change: bool,
}

/// Sturm sequence of a nonzero polynomial. The last element is (numerically)
/// the gcd of `p` and `p'`.
fn sturm_sequence(p: &Polynomial) -> Vec<Polynomial> {
    let p0 = p.normalized();
    let p1 = p0.derivative().normalized();
    let mut seq = vec![p0];
    if p1.is_zero() {
        return seq;
    }
    seq.push(p1);
    loop {
        let n = seq.len();
        let (_, r) = seq[n - 2].div_rem(&seq[n - 1]);
        let r = r.chop(f64::EPSILON);
        // Remainders tiny relative to the dividend are cancellation noise.
        if r.is_zero() || r.max_abs_coeff() <= REMAINDER_TOL * seq[n - 2].max_abs_coeff() {
            break;
        }
        seq.push((-&r).normalized());
        if seq.last().unwrap().degree() == 0 {
            break;
        }
    }
    seq
}

fn sign_variations(seq: &[Polynomial], x: f64) -> usize {
    let mut count = 0;
    let mut last = 0.0f64;
    for p in seq {
        let v = p.eval(x);
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

/// Square-free part of `p`, normalized.
fn square_free(p: &Polynomial) -> Polynomial {
    let seq = sturm_sequence(p);
    let g = seq.last().unwrap();
    if seq.len() < 2 || g.degree() == 0 {
        return p.normalized();
    }
    let (q, _) = p.normalized().div_rem(g);
    q.normalized()
}

struct Sturm {
    seq: Vec<Polynomial>,
}

impl Sturm {
    fn new(sf: &Polynomial) -> Self {
        Self { seq: sturm_sequence(sf) }
    }

    fn variations(&self, x: f64) -> usize {
        sign_variations(&self.seq, x)
    }

    fn base(&self) -> &Polynomial {
        &self.seq[0]
    }

    /// Distinct roots in `(a, b]`, assuming `a` is not a root.
    fn count(&self, a: f64, b: f64) -> usize {
        self.variations(a).saturating_sub(self.variations(b))
    }
}

fn check_interval(lo: f64, hi: f64) -> Result<(), PolyError> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo || lo + (hi - lo) * 0.5 == lo {
        return Err(PolyError::PrecisionUnachievable { lo, hi });
    }
    Ok(())
}

fn clamp_bits(l: u32) -> u32 {
    if l > WARN_ROOT_BITS {
        log::warn!("root precision 2^-{l} requested; double-precision Sturm signs are unreliable past 2^-{WARN_ROOT_BITS}");
    }
    l.clamp(1, MAX_ROOT_BITS)
}

/// Number of distinct real roots of `p` in the open interval `(lo, hi)`,
/// counted by Sturm sign variations.
pub fn sturm_count(p: &Polynomial, interval: (f64, f64)) -> Result<usize, PolyError> {
    let (lo, hi) = interval;
    check_interval(lo, hi)?;
    if p.is_zero() {
        return Err(PolyError::ZeroPolynomial);
    }
    let sf = square_free(p);
    let s = Sturm::new(&sf);
    let (a, b) = open_ends(p, s.base(), lo, hi);
    Ok(s.count(a, b))
}

// Moves an end that is a root of `p` (or of its square-free part, whose roots
// carry rounding error) slightly inward, so counts refer to the open interval.
fn open_ends(p: &Polynomial, sf: &Polynomial, lo: f64, hi: f64) -> (f64, f64) {
    let w = (hi - lo) * ENDPOINT_NUDGE;
    let at_root = |x: f64| p.eval(x) == 0.0 || sf.eval(x) == 0.0;
    let mut a = lo;
    if at_root(lo) {
        a = (lo + w).max(lo.next_up());
    }
    let mut b = hi;
    if at_root(hi) {
        b = (hi - w).min(hi.next_down());
    }
    (a, b.max(a))
}

/// Isolates every real root of `p` inside the open interval `interval`, each
/// to within `2^-l`.
pub fn isolate_roots(p: &Polynomial, interval: (f64, f64), l: u32) -> Result<Vec<RootApprox>, PolyError> {
    let (lo, hi) = interval;
    check_interval(lo, hi)?;
    if p.is_zero() {
        return Err(PolyError::ZeroPolynomial);
    }
    if p.degree() == 0 {
        return Ok(Vec::new());
    }
    let l = clamp_bits(l);
    let radius = 0.5f64.powi(l as i32);
    let orig = p.normalized();
    let sf = square_free(p);
    let sturm = Sturm::new(&sf);
    let (a0, b0) = open_ends(p, sturm.base(), lo, hi);

    let mut out = Vec::new();
    // Work stack of (a, b, count in (a, b]).
    let mut stack = vec![(a0, b0, sturm.count(a0, b0))];
    while let Some((a, b, c)) = stack.pop() {
        if c == 0 {
            continue;
        }
        let f = sturm.base();
        let (fa, fb) = (f.eval(a), f.eval(b));
        if c == 1 && fa * fb < 0.0 {
            out.push(refine_by_sign(f, a, b, radius, &orig));
            continue;
        }
        let mid = a + (b - a) * 0.5;
        if b - a <= 2.0 * radius || mid <= a || mid >= b {
            // Cluster narrower than the requested precision, or a root sits
            // on `b`; report it as one enclosure.
            let value = a + (b - a) * 0.5;
            let r = ((b - a) * 0.5).min(radius);
            let sc = orig.eval(a) * orig.eval(b) < 0.0;
            for _ in 0..c {
                out.push(RootApprox { value: if fb == 0.0 { b } else { value }, radius: r, sign_change: sc });
            }
            continue;
        }
        let fm = f.eval(mid);
        let mid = if fm == 0.0 {
            // Avoid splitting exactly on a root: the left half would count it
            // while the right half's lower end would be a root.
            let cand = a + (b - a) * 0.4999;
            if f.eval(cand) == 0.0 {
                a + (b - a) * 0.5001
            } else {
                cand
            }
        } else {
            mid
        };
        let cl = sturm.count(a, mid);
        let cr = c.saturating_sub(cl);
        stack.push((mid, b, cr));
        stack.push((a, mid, cl));
    }
    out.sort_by(|x, y| x.value.total_cmp(&y.value));
    Ok(out)
}

fn refine_by_sign(f: &Polynomial, mut a: f64, mut b: f64, radius: f64, orig: &Polynomial) -> RootApprox {
    let (a0, b0) = (a, b);
    let mut fa = f.eval(a);
    while b - a > 2.0 * radius {
        let m = a + (b - a) * 0.5;
        if m <= a || m >= b {
            break;
        }
        let fm = f.eval(m);
        if fm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    // The bracket holds exactly one distinct root, so the input polynomial
    // changes sign across it iff that root has odd multiplicity. Its ends may
    // be roots of other factors, so sample inside it, far enough from the
    // root that rounding does not decide the sign.
    let d = (b - a).max((b0 - a0) * 1e-3);
    let side = |outer: f64, inner: f64, dir: f64| {
        let x = inner + dir * d;
        if (x - outer) * dir < 0.0 {
            x
        } else if inner != outer {
            inner + (outer - inner) * 0.5
        } else {
            x
        }
    };
    let sign_change = orig.eval(side(a0, a, -1.0)) * orig.eval(side(b0, b, 1.0)) < 0.0;
    let value = a + (b - a) * 0.5;
    RootApprox { value, radius: (b - a) * 0.5, sign_change }
}
