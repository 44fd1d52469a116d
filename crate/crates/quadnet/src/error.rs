//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by quadnet operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// A hyperparameter or configuration value violates its contract.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The dataset cannot support the requested operation (for example a
    /// reference whose fine class has no second sample).
    #[error("degenerate dataset: {0}")]
    Degenerate(String),

    /// Structural validation of a value failed.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A file could not be parsed; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Underlying I/O failure.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss and aborted.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
