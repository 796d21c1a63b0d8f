//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {difference:e}")]
    NotSymmetric {
        row: usize,
        col: usize,
        difference: f64,
    },

    #[error("matrix is not positive definite: eigenvalue {eigenvalue:e} is below threshold {threshold:e}")]
    NotPositiveDefinite { eigenvalue: f64, threshold: f64 },

    #[error("symmetric eigensolver did not converge for a {dim}x{dim} matrix")]
    EigenNonConvergence { dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Karcher mean did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    KarcherNotConverged { iterations: usize, gradient_norm: f64 },

    #[error("coordinate descent did not converge after {passes} passes (max coefficient change {max_delta:e})")]
    ElasticNetNotConverged { passes: usize, max_delta: f64 },

    #[error("channel {channel} is constant; rank correlation is undefined")]
    DegenerateChannel { channel: usize },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("column mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    ColumnMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("leakage audit failed: {0}")]
    Leakage(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Convergence,
    Io,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps the error with a human-readable context such as a subject id.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Context { source, .. } => source.class(),
            Error::KarcherNotConverged { .. }
            | Error::ElasticNetNotConverged { .. }
            | Error::EigenNonConvergence { .. } => ErrorClass::Convergence,
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}
