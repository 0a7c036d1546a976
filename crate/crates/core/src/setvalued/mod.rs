//! Interval-valued maps `F(x) = [f⁻(x), f⁺(x)]`, their minimal invariant
//! sets, and tests for discontinuous bifurcations of those sets.

mod bifurcation;
mod interval;
mod invariant;
mod maps;
mod roots;

pub use bifurcation::{
    bifurcation_scan, check_persistence, check_saddle_node_sufficient, scalar_saddle_node_test,
    Boundary, BifurcationKind, BifurcationReport, Persistence, SaddleNodeConditions, ScanOptions,
};
pub use interval::{hausdorff, Interval, IntervalUnion, MERGE_GAP};
pub use invariant::{
    image_of_set, is_monotone, minimal_invariant_sets, minimal_invariant_sets_monotone,
    minimal_invariant_sets_reversing, set_iterate_oracle, Monotonicity, OracleOptions,
    ReversingSets, MONOTONICITY_SAMPLES,
};
pub use maps::{
    additive_family, examples, ExtremalPair, Fax, Fx, ParamMap, ScalarMap, SetValuedFamily,
    FD_REL_TOL, FD_STEP,
};
pub use roots::{
    bisect, fixed_points, fixed_points_with, tangency_parameter, FixedPoint, Stability, Tangency,
    DEFAULT_GRID, MARGINAL_TOL,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetValuedError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate map: {0}")]
    Degenerate(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("precondition violated: {message}")]
    PreconditionViolation {
        message: String,
        /// Critical point of an extremal map inside the candidate set, if any.
        critical_point: Option<f64>,
    },
    #[error("no convergence after {iterations} iterations (last Hausdorff step {last_distance})")]
    ConvergenceFailure { iterations: usize, last_distance: f64 },
    #[error("missing capability: {0}")]
    Capability(String),
}
