use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum FsvmError {
    /// Malformed or out-of-domain argument (non-finite values, bad hyperparameters, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The problem is well-formed but cannot be trained (e.g. only one class present).
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    /// Text input that does not follow the expected grammar.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Document(String),
}

impl FsvmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FsvmError::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        FsvmError::Degenerate(msg.into())
    }

    /// Process exit code for the command-line front end.
    ///
    /// `2` for anything caused by bad input, `3` for degenerate training problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            FsvmError::Degenerate(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = FsvmError> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(FsvmError::DimensionMismatch { expected, found })
    }
}
