use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver and the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported field structure: {0}")]
    UnsupportedStructure(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("p.v. undefined for component ({i}, {j}): spherical mean {mean:e} exceeds tolerance")]
    PvUndefined { i: usize, j: usize, mean: f64 },

    #[error("state is not admissible: {0}")]
    Inadmissible(String),

    #[error("poisoned state: {0}")]
    PoisonedState(String),

    #[error("Picard step rejected after {} iterations (last residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    PicardRejected { residuals: Vec<f64> },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    /// Process exit status: 2 for configuration and input errors, 3 for
    /// numerical failures, 4 for I/O errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::UnsupportedStructure(_) | Error::Parse(_) => 2,
            Error::Numerical(_)
            | Error::PvUndefined { .. }
            | Error::Inadmissible(_)
            | Error::PoisonedState(_)
            | Error::PicardRejected { .. } => 3,
            Error::Io { .. } => 4,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
