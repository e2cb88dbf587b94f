use thiserror::Error;

/// Errors raised by model construction, fitting and inference.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrtError {
    #[error("item bank must contain at least one item")]
    EmptyBank,
    #[error("difficulty of item {index} is not finite")]
    NonFiniteDifficulty { index: usize },
    #[error("scale constant must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("response value {value} at position {index} is not 0 or 1")]
    NonBinaryResponse { index: usize, value: u8 },
    #[error("response pattern has {found} items, expected {expected}")]
    PatternLength { expected: usize, found: usize },
    #[error("response matrix must contain at least one respondent")]
    EmptyMatrix,
    #[error("{rows} rows but {ids} respondent identifiers")]
    RowIdMismatch { rows: usize, ids: usize },
    #[error("quadrature node count {count} out of range: {bound}")]
    NodeCount { count: usize, bound: &'static str },
    #[error("tridiagonal eigen-solver did not converge")]
    EigenSolver,
    #[error("hyperparameter for {method} must satisfy 0 < alpha <= 1, got {alpha}")]
    AlphaOutOfRange { method: &'static str, alpha: f64 },
    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("fit requested for {requested} but configuration selects {configured}")]
    MethodMismatch {
        requested: &'static str,
        configured: &'static str,
    },
    #[error("marginal probability of pattern {pattern} underflowed to zero")]
    ZeroMarginal { pattern: String },
    #[error("matrix is singular or ill-conditioned (condition number {condition:e}); use more data or a smaller alpha")]
    Singular { condition: f64 },
    #[error("line search failed to decrease the majorizer at iteration {iteration}")]
    LineSearch { iteration: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("pattern enumeration needs J <= {cap}, got J = {items}")]
    EnumerationCap { items: usize, cap: usize },
    #[error("{failed} of {total} replications failed (more than 5%)")]
    TooManyFailures { failed: usize, total: usize },
}

pub type Result<T, E = IrtError> = std::result::Result<T, E>;
