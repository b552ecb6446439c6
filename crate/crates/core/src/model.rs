//! Audit game instances: utilities, inspection resources and the restriction
//! set, plus the derived utility differences used by every solver.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default declared bit precision of instance values.
pub const DEFAULT_INPUT_BITS: u32 = 20;

/// Largest accepted bit precision. Anything finer than this cannot be checked
/// meaningfully with `f64` scaling.
pub const MAX_INPUT_BITS: u32 = 64;

/// Utilities of a single target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetUtilities {
    /// Defender utility when the attacked target is audited.
    pub ud_audited: f64,
    /// Defender utility when the attacked target is not audited.
    pub ud_unaudited: f64,
    /// Attacker utility (before punishment) when the attacked target is audited.
    pub ua_audited: f64,
    /// Attacker utility when the attacked target is not audited.
    pub ua_unaudited: f64,
}

impl TargetUtilities {
    pub fn new(ud_audited: f64, ud_unaudited: f64, ua_audited: f64, ua_unaudited: f64) -> Self {
        Self { ud_audited, ud_unaudited, ua_audited, ua_unaudited }
    }

    fn fields(&self) -> [(&'static str, f64); 4] {
        [
            ("ud_a", self.ud_audited),
            ("ud_u", self.ud_unaudited),
            ("ua_a", self.ua_audited),
            ("ua_u", self.ua_unaudited),
        ]
    }
}

/// On-disk target record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTarget {
    pub ud_a: f64,
    pub ud_u: f64,
    pub ua_a: f64,
    pub ua_u: f64,
}

impl From<RawTarget> for TargetUtilities {
    fn from(t: RawTarget) -> Self {
        TargetUtilities::new(t.ud_a, t.ud_u, t.ua_a, t.ua_u)
    }
}

impl From<TargetUtilities> for RawTarget {
    fn from(t: TargetUtilities) -> Self {
        RawTarget { ud_a: t.ud_audited, ud_u: t.ud_unaudited, ua_a: t.ua_audited, ua_u: t.ua_unaudited }
    }
}

fn default_bits() -> u32 {
    DEFAULT_INPUT_BITS
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// An unvalidated instance, as read from or written to an instance file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInstance {
    pub targets: Vec<RawTarget>,
    pub resources: usize,
    #[serde(default)]
    pub restrictions: Vec<[usize; 2]>,
    pub a: f64,
    #[serde(default)]
    pub a1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_vec: Option<Vec<f64>>,
    #[serde(default = "default_bits")]
    pub input_bits: u32,
    /// Accept targets whose utilities break the audited/unaudited ordering.
    /// Only meant for reproducing published instances that do so.
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_order_violations: bool,
}

impl RawInstance {
    pub fn from_json(text: &str) -> Result<Self, GameError> {
        serde_json::from_str(text).map_err(|e| GameError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialization cannot fail")
    }
}

/// A single reason an instance was rejected.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoTargets,
    NoResources,
    KTooLarge { k: usize, n: usize },
    UtilityOrderViolation { target: usize, defender: bool, gap: f64 },
    IndexOutOfRange { resource: usize, target: usize },
    PrecisionOverflow { target: usize, field: &'static str, value: f64, bits: u32 },
    NonFinite { what: String },
    NegativeCost { what: String, value: f64 },
    CostVectorLength { expected: usize, found: usize },
    BadInputBits(u32),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoTargets => write!(f, "instance has no targets"),
            Violation::NoResources => write!(f, "instance has no inspection resources"),
            Violation::KTooLarge { k, n } => {
                write!(f, "KTooLarge: {k} resources for {n} targets (need k < n)")
            }
            Violation::UtilityOrderViolation { target, defender, gap } => {
                if *defender {
                    write!(f, "UtilityOrderViolation: target {target} has ud_a < ud_u (by {gap})")
                } else {
                    write!(f, "UtilityOrderViolation: target {target} has ua_u < ua_a (by {gap})")
                }
            }
            Violation::IndexOutOfRange { resource, target } => {
                write!(f, "IndexOutOfRange: restriction ({resource}, {target})")
            }
            Violation::PrecisionOverflow { target, field, value, bits } => write!(
                f,
                "PrecisionOverflow: target {target} field {field} = {value} is not a multiple of 2^-{bits}"
            ),
            Violation::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Violation::NegativeCost { what, value } => write!(f, "negative cost {what} = {value}"),
            Violation::CostVectorLength { expected, found } => {
                write!(f, "a_vec has {found} entries, expected {expected}")
            }
            Violation::BadInputBits(b) => {
                write!(f, "input_bits = {b} outside 1..={MAX_INPUT_BITS}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid instance: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("cannot parse instance: {0}")]
    Parse(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl GameError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            GameError::Invalid(v) => v,
            GameError::Parse(_) => &[],
        }
    }
}

/// A validated audit game. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditGame {
    targets: Vec<TargetUtilities>,
    n_resources: usize,
    restrictions: BTreeSet<(usize, usize)>,
    cost_a: f64,
    cost_a1: f64,
    per_target_costs: Option<Vec<f64>>,
    input_bits: u32,
    unauditable: Vec<bool>,
    order_violations: Vec<usize>,
}

/// Returns true when `v` is an exact multiple of `2^-bits`.
pub fn fits_bits(v: f64, bits: u32) -> bool {
    let scaled = v * 2f64.powi(bits as i32);
    scaled.is_finite() && scaled == scaled.trunc()
}

/// Rounds `v` to the nearest multiple of `2^-bits`.
pub fn snap_to_bits(v: f64, bits: u32) -> f64 {
    let scale = 2f64.powi(bits as i32);
    (v * scale).round() / scale
}

/// Validates a raw instance, collecting every violation found.
pub fn validate_game(raw: &RawInstance) -> Result<AuditGame, GameError> {
    let n = raw.targets.len();
    let k = raw.resources;
    let mut errs = Vec::new();

    if n == 0 {
        errs.push(Violation::NoTargets);
    }
    if k == 0 {
        errs.push(Violation::NoResources);
    }
    if k >= n && n > 0 {
        errs.push(Violation::KTooLarge { k, n });
    }
    let bits_ok = (1..=MAX_INPUT_BITS).contains(&raw.input_bits);
    if !bits_ok {
        errs.push(Violation::BadInputBits(raw.input_bits));
    }

    let mut order_violations = Vec::new();
    for (i, t) in raw.targets.iter().enumerate() {
        let u = TargetUtilities::from(*t);
        for (field, value) in u.fields() {
            if !value.is_finite() {
                errs.push(Violation::NonFinite { what: format!("target {i} {field}") });
            } else if bits_ok && !fits_bits(value, raw.input_bits) {
                errs.push(Violation::PrecisionOverflow {
                    target: i,
                    field,
                    value,
                    bits: raw.input_bits,
                });
            }
        }
        let d_gap = u.ud_audited - u.ud_unaudited;
        let a_gap = u.ua_unaudited - u.ua_audited;
        if d_gap < 0.0 || a_gap < 0.0 {
            if raw.allow_order_violations {
                order_violations.push(i);
            } else {
                if d_gap < 0.0 {
                    errs.push(Violation::UtilityOrderViolation { target: i, defender: true, gap: -d_gap });
                }
                if a_gap < 0.0 {
                    errs.push(Violation::UtilityOrderViolation { target: i, defender: false, gap: -a_gap });
                }
            }
        }
    }

    let mut restrictions = BTreeSet::new();
    for &[j, i] in &raw.restrictions {
        if j >= k || i >= n {
            errs.push(Violation::IndexOutOfRange { resource: j, target: i });
        } else {
            restrictions.insert((j, i));
        }
    }

    for (what, v) in [("a", raw.a), ("a1", raw.a1)] {
        if !v.is_finite() {
            errs.push(Violation::NonFinite { what: what.to_string() });
        } else if v < 0.0 {
            errs.push(Violation::NegativeCost { what: what.to_string(), value: v });
        }
    }
    if let Some(av) = &raw.a_vec {
        if av.len() != n {
            errs.push(Violation::CostVectorLength { expected: n, found: av.len() });
        }
        for (i, &v) in av.iter().enumerate() {
            if !v.is_finite() {
                errs.push(Violation::NonFinite { what: format!("a_vec[{i}]") });
            } else if v < 0.0 {
                errs.push(Violation::NegativeCost { what: format!("a_vec[{i}]"), value: v });
            }
        }
    }

    if !errs.is_empty() {
        return Err(GameError::Invalid(errs));
    }

    let unauditable = (0..n)
        .map(|i| (0..k).all(|j| restrictions.contains(&(j, i))))
        .collect();

    Ok(AuditGame {
        targets: raw.targets.iter().map(|&t| t.into()).collect(),
        n_resources: k,
        restrictions,
        cost_a: raw.a,
        cost_a1: raw.a1,
        per_target_costs: raw.a_vec.clone(),
        input_bits: raw.input_bits,
        unauditable,
        order_violations,
    })
}

impl AuditGame {
    /// Convenience constructor: builds the raw instance and validates it.
    pub fn new(
        targets: Vec<TargetUtilities>,
        n_resources: usize,
        restrictions: &[(usize, usize)],
        cost_a: f64,
    ) -> Result<Self, GameError> {
        let raw = RawInstance {
            targets: targets.into_iter().map(RawTarget::from).collect(),
            resources: n_resources,
            restrictions: restrictions.iter().map(|&(j, i)| [j, i]).collect(),
            a: cost_a,
            a1: 0.0,
            a_vec: None,
            input_bits: MAX_INPUT_BITS,
            allow_order_violations: false,
        };
        validate_game(&raw)
    }

    pub fn from_json(text: &str) -> Result<Self, GameError> {
        validate_game(&RawInstance::from_json(text)?)
    }

    pub fn to_raw(&self) -> RawInstance {
        RawInstance {
            targets: self.targets.iter().map(|&t| t.into()).collect(),
            resources: self.n_resources,
            restrictions: self.restrictions.iter().map(|&(j, i)| [j, i]).collect(),
            a: self.cost_a,
            a1: self.cost_a1,
            a_vec: self.per_target_costs.clone(),
            input_bits: self.input_bits,
            allow_order_violations: !self.order_violations.is_empty(),
        }
    }

    /// Returns a copy with a different `a1` coefficient.
    pub fn with_cost_a1(&self, a1: f64) -> Result<Self, GameError> {
        let mut raw = self.to_raw();
        raw.a1 = a1;
        validate_game(&raw)
    }

    /// Returns a copy with target-specific punishment costs.
    pub fn with_per_target_costs(&self, costs: Vec<f64>) -> Result<Self, GameError> {
        let mut raw = self.to_raw();
        raw.a_vec = Some(costs);
        validate_game(&raw)
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn n_resources(&self) -> usize {
        self.n_resources
    }

    pub fn targets(&self) -> &[TargetUtilities] {
        &self.targets
    }

    pub fn target(&self, i: usize) -> &TargetUtilities {
        &self.targets[i]
    }

    pub fn restrictions(&self) -> &BTreeSet<(usize, usize)> {
        &self.restrictions
    }

    /// True when resource `j` may audit target `i`.
    pub fn can_audit(&self, j: usize, i: usize) -> bool {
        !self.restrictions.contains(&(j, i))
    }

    pub fn cost_a(&self) -> f64 {
        self.cost_a
    }

    pub fn cost_a1(&self) -> f64 {
        self.cost_a1
    }

    pub fn input_bits(&self) -> u32 {
        self.input_bits
    }

    pub fn per_target_costs(&self) -> Option<&[f64]> {
        self.per_target_costs.as_deref()
    }

    /// Per-target punishment costs, falling back to the uniform `a`.
    pub fn effective_target_costs(&self) -> Vec<f64> {
        match &self.per_target_costs {
            Some(v) => v.clone(),
            None => vec![self.cost_a; self.n_targets()],
        }
    }

    /// Targets no resource can audit; their coverage is pinned to zero.
    pub fn is_unauditable(&self, i: usize) -> bool {
        self.unauditable[i]
    }

    pub fn unauditable_targets(&self) -> Vec<usize> {
        (0..self.n_targets()).filter(|&i| self.unauditable[i]).collect()
    }

    /// Targets accepted despite breaking the utility ordering.
    pub fn order_violations(&self) -> &[usize] {
        &self.order_violations
    }

    /// Allowed (resource, target) pairs in row-major order.
    pub fn allowed_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.n_resources {
            for i in 0..self.n_targets() {
                if self.can_audit(j, i) {
                    out.push((j, i));
                }
            }
        }
        out
    }

    /// Defender utility when `star` is attacked, coverage `p_star`, punishment `x`.
    pub fn defender_utility(&self, star: usize, p_star: f64, x: f64) -> f64 {
        let t = &self.targets[star];
        let mut gain = t.ud_audited - t.ud_unaudited;
        if self.cost_a1 != 0.0 {
            gain -= self.cost_a1 * x;
        }
        t.ud_unaudited + p_star * gain - self.cost_a * x
    }

    /// Attacker payoff for attacking target `i` with coverage `p` and punishment `x`.
    pub fn attacker_utility(&self, i: usize, p: f64, x: f64) -> f64 {
        let t = &self.targets[i];
        p * (t.ua_audited - x) + (1.0 - p) * t.ua_unaudited
    }
}

/// Utility differences shared by all solver formulations.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaTable {
    /// `ud_audited - ud_unaudited` per target.
    pub delta_d: Vec<f64>,
    /// `ua_unaudited - ua_audited` per target.
    pub delta: Vec<f64>,
    /// `delta_pair[i][j] = ua_unaudited(i) - ua_unaudited(j)`.
    pub delta_pair: Vec<Vec<f64>>,
}

impl DeltaTable {
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.delta_pair[i][j]
    }
}

pub fn compute_deltas(game: &AuditGame) -> DeltaTable {
    let t = game.targets();
    let delta_d = t.iter().map(|u| u.ud_audited - u.ud_unaudited).collect();
    let delta = t.iter().map(|u| u.ua_unaudited - u.ua_audited).collect();
    let delta_pair = t
        .iter()
        .map(|ui| t.iter().map(|uj| ui.ua_unaudited - uj.ua_unaudited).collect())
        .collect();
    DeltaTable { delta_d, delta, delta_pair }
}

/// Per-target set of resources allowed to audit it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditSetMap {
    n_resources: usize,
    sets: Vec<Vec<usize>>,
}

impl AuditSetMap {
    /// Sorted resources allowed to audit target `i`.
    pub fn of(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn n_resources(&self) -> usize {
        self.n_resources
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.sets.iter().map(|s| s.as_slice())
    }

    /// Rebuilds the restriction set these audit sets were derived from.
    pub fn to_restrictions(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for (i, set) in self.sets.iter().enumerate() {
            for j in 0..self.n_resources {
                if set.binary_search(&j).is_err() {
                    out.insert((j, i));
                }
            }
        }
        out
    }
}

pub fn audit_sets(game: &AuditGame) -> AuditSetMap {
    let sets = (0..game.n_targets())
        .map(|i| (0..game.n_resources()).filter(|&j| game.can_audit(j, i)).collect())
        .collect();
    AuditSetMap { n_resources: game.n_resources(), sets }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(targets: &[(f64, f64, f64, f64)], k: usize, r: &[[usize; 2]]) -> RawInstance {
        RawInstance {
            targets: targets
                .iter()
                .map(|&(a, b, c, d)| RawTarget { ud_a: a, ud_u: b, ua_a: c, ua_u: d })
                .collect(),
            resources: k,
            restrictions: r.to_vec(),
            a: 0.01,
            a1: 0.0,
            a_vec: None,
            input_bits: 60,
            allow_order_violations: false,
        }
    }

    #[test]
    fn k_must_be_below_n() {
        let err = validate_game(&raw(&[(0.6, 0.5, 0.2, 0.3)], 1, &[])).unwrap_err();
        assert!(err.violations().iter().any(|v| matches!(v, Violation::KTooLarge { k: 1, n: 1 })));
    }

    #[test]
    fn two_target_game_is_valid() {
        let g = validate_game(&raw(&[(0.6, 0.5, 0.2, 0.3), (0.7, 0.0, 0.8, 0.9)], 1, &[])).unwrap();
        assert_eq!(g.n_targets(), 2);
        assert!(g.unauditable_targets().is_empty());
    }

    #[test]
    fn attacker_order_violation_rejected() {
        let err = validate_game(&raw(&[(0.6, 0.5, 0.9, 0.5), (0.7, 0.0, 0.8, 0.9)], 1, &[])).unwrap_err();
        assert!(err
            .violations()
            .iter()
            .any(|v| matches!(v, Violation::UtilityOrderViolation { target: 0, defender: false, .. })));
    }

    #[test]
    fn order_violation_can_be_allowed() {
        let mut r = raw(&[(0.6, 0.5, 0.9, 0.5), (0.7, 0.0, 0.8, 0.9)], 1, &[]);
        r.allow_order_violations = true;
        let g = validate_game(&r).unwrap();
        assert_eq!(g.order_violations(), &[0]);
    }

    #[test]
    fn restriction_index_checked() {
        let err = validate_game(&raw(&[(0.6, 0.5, 0.2, 0.3), (0.7, 0.0, 0.8, 0.9)], 1, &[[1, 0]])).unwrap_err();
        assert!(matches!(err.violations()[0], Violation::IndexOutOfRange { resource: 1, target: 0 }));
    }

    #[test]
    fn precision_checked() {
        let mut r = raw(&[(0.6, 0.5, 0.2, 0.3), (0.7, 0.0, 0.8, 0.9)], 1, &[]);
        r.input_bits = 20;
        let err = validate_game(&r).unwrap_err();
        assert!(err.violations().iter().all(|v| matches!(v, Violation::PrecisionOverflow { .. })));
        let mut r = raw(&[(0.75, 0.5, 0.25, 0.5), (0.5, 0.0, 0.125, 0.875)], 1, &[]);
        r.input_bits = 20;
        assert!(validate_game(&r).is_ok());
    }

    #[test]
    fn unauditable_target_flagged() {
        let g = validate_game(&raw(
            &[(0.6, 0.5, 0.2, 0.3), (0.7, 0.0, 0.8, 0.9), (0.7, 0.0, 0.8, 0.9)],
            2,
            &[[0, 2], [1, 2]],
        ))
        .unwrap();
        assert!(g.is_unauditable(2));
        assert_eq!(g.unauditable_targets(), vec![2]);
    }

    #[test]
    fn deltas_of_counterexample_rows() {
        let g = validate_game(&raw(&[(0.614, 0.598, 0.202, 0.287), (0.719, 0.036, 0.869, 0.999)], 1, &[]))
            .unwrap();
        let d = compute_deltas(&g);
        assert!((d.delta_d[0] - 0.016).abs() < 1e-12);
        assert!((d.delta[0] - 0.085).abs() < 1e-12);
        assert!((d.pair(0, 1) + 0.712).abs() < 1e-12);
        assert_eq!(d.pair(0, 0), 0.0);
        assert_eq!(d.pair(0, 1), -d.pair(1, 0));
    }

    #[test]
    fn audit_sets_follow_restrictions() {
        let targets = vec![(0.6, 0.5, 0.2, 0.3); 4];
        let g = validate_game(&raw(&targets, 3, &[])).unwrap();
        let f = audit_sets(&g);
        assert!(f.iter().all(|s| s == [0, 1, 2]));

        let g = validate_game(&raw(&targets, 3, &[[1, 0]])).unwrap();
        let f = audit_sets(&g);
        assert_eq!(f.of(0), &[0, 2]);
        assert_eq!(f.to_restrictions(), g.restrictions().clone());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"targets": [], "resources": 1, "a": 0.1, "colour": 3}"#;
        assert!(matches!(RawInstance::from_json(text), Err(GameError::Parse(_))));
    }

    #[test]
    fn defaults_applied() {
        let text = r#"{"targets": [{"ud_a": 0.5, "ud_u": 0.25, "ua_a": 0.25, "ua_u": 0.5},
                                   {"ud_a": 0.5, "ud_u": 0.25, "ua_a": 0.25, "ua_u": 0.5}],
                       "resources": 1, "a": 0.125}"#;
        let raw = RawInstance::from_json(text).unwrap();
        assert_eq!(raw.a1, 0.0);
        assert_eq!(raw.input_bits, DEFAULT_INPUT_BITS);
        assert!(raw.restrictions.is_empty());
        assert!(validate_game(&raw).is_ok());
    }
}
