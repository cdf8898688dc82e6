use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The CLI maps these onto its exit-code contract via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alpha {0}: must be finite and at least 1e-6 away from 0 and 1")]
    InvalidAlpha(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("mismatched lengths: {left} vs {right}")]
    MismatchedLength { left: usize, right: usize },
    #[error("absolute continuity violated at index {index}: p > 0 where q = 0")]
    AbsoluteContinuityViolated { index: usize },
    #[error("logarithm argument {argument} is not positive")]
    LogDomainViolation { argument: f64 },
    #[error("invalid bound inputs: {0}")]
    InvalidBoundInputs(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite density at evaluation point {index}")]
    NonFiniteDensity { index: usize },
    #[error("ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("no alpha satisfies gradient bound {rho}: smallest attainable magnitude is {min_magnitude}")]
    NoFeasibleAlpha { rho: f64, min_magnitude: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("operation `{0}` has no registered partial derivatives")]
    UnregisteredOperation(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("degenerate batch of {size} samples (need at least 2)")]
    DegenerateBatch { size: usize },
    #[error("shared class {0} has no evaluation samples")]
    MissingClass(usize),
    #[error("invalid domain spec: {0}")]
    SpecInvalid(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse failure at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 2 validation, 3 infeasible or non-convergent, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoFeasibleAlpha { .. } | Error::NonConvergence { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
