use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{primitive}: shape mismatch ({detail})")]
    Shape {
        primitive: &'static str,
        detail: String,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failed at iterate {iterate}, t = {time}: {reason}")]
    Solver {
        iterate: usize,
        time: f64,
        reason: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("curve {curve} (seed {seed}) failed the residual check: {residual:.3e} > {limit:.1e}")]
    Generation {
        curve: usize,
        seed: u64,
        residual: f64,
        limit: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(primitive: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            primitive,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }
}
