//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
///
/// Variants map onto the failure classes surfaced by the CLI: configuration
/// problems, malformed or invalid data, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file: bad magic, unsupported header, truncated payload.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed input with invalid content (non-finite values, zero rows,
    /// empty classes).
    #[error("data error: {0}")]
    Data(String),

    /// Incompatible array dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// A documented operation precondition was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Synthetic data generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// A linear system remained singular after ridge escalation.
    #[error("singular system: {0}")]
    Singular(String),

    /// An iterative solver exceeded its iteration budget.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Invalid run configuration (method/label/logits mismatches).
    #[error("config error: {0}")]
    Config(String),

    /// A metric was requested on degenerate input.
    #[error("metric error: {0}")]
    Metric(String),

    /// Invariant breach that should be unreachable through the public API.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
