//! Stackelberg audit games with restricted inspection resources.
//!
//! The defender commits to a randomized allocation of `k` inspection resources
//! over `n` targets together with a punishment rate; the attacker best-responds.
//! This crate computes near-optimal commitments three ways:
//!
//! * [`fpt`]: discretize the punishment rate and solve one LP per grid value and
//!   candidate best-response target, either over the full allocation grid or
//!   over the compact coverage constraints from [`constraints`];
//! * [`fptas`]: reduce each best-response program to two variables and
//!   optimize along rational boundary curves with certified root isolation;
//! * [`tsp`]: target-specific punishment rates via convex barrier subproblems.
//!
//! [`alloc`] turns a coverage vector back into an executable mixture of pure
//! audit assignments.

pub mod model;
pub mod poly;
pub mod lp;
pub mod constraints;
pub mod alloc;
pub mod fpt;
pub mod fptas;
pub mod tsp;
pub mod experiments;

pub use lp::{Constraint, LinearProgram, LpError, LpOutcome, LpStatus, Relation};
pub use model::{
    audit_sets, compute_deltas, validate_game, AuditGame, AuditSetMap, DeltaTable, GameError, RawInstance,
    TargetUtilities, Violation,
};
pub use poly::{Polynomial, PolyError, RationalFn, RootApprox};
pub use constraints::{constraint_find, extract_constraints_naive, ConstraintSet, CoverageConstraint, ExtractError};
pub use alloc::{bvn_decompose, recover_allocation, AllocError, AllocationMatrix, PureStrategyMixture};
pub use fpt::{
    solve_fpt, verify_solution, CoverageSolution, Formulation, Method, SolveConfig, SolveError, SolveOutput, SolveStats,
};
pub use fptas::{solve_fptas, CandidatePoint, FptasOutput, SubproblemEQ};
pub use tsp::{solve_px, HyperbolicConstraint, TspOutput};
