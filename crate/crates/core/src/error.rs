use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum OfrrError {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid precision policy: {0}")]
    InvalidPolicy(String),

    #[error("every input column was dropped; the basis is empty")]
    EmptyBasis,

    #[error("starting vector is zero")]
    ZeroStartVector,

    #[error("{routine} did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NonConvergence {
        routine: &'static str,
        sweeps: usize,
        off_norm: f64,
    },

    #[error("non-finite value after {stage}")]
    NonFinite { stage: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid experiment spec: {0}")]
    Spec(String),
}

impl OfrrError {
    pub(crate) fn dims(op: &'static str, detail: impl Into<String>) -> Self {
        OfrrError::DimensionMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn non_finite(stage: impl Into<String>) -> Self {
        OfrrError::NonFinite {
            stage: stage.into(),
        }
    }
}

pub type Result<T, E = OfrrError> = std::result::Result<T, E>;
