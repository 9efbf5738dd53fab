use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The weights summed to zero, i.e. every particle got zero likelihood.
    #[error("all particle weights are zero")]
    AllZeroWeights,

    #[error("weight {index} is not a finite nonnegative number ({value})")]
    InvalidWeight { index: usize, value: f64 },

    #[error("state has non-finite component {index} ({value})")]
    NonFiniteState { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("particle set must contain at least one particle")]
    EmptySet,

    #[error("role assignment needs at least 3 particles, got {0}")]
    TooFewParticles(usize),

    #[error("enumeration of {outcomes} outcomes exceeds the guard of {limit}")]
    TooLarge { outcomes: f64, limit: f64 },

    #[error("first vector does not majorize the second")]
    NotMajorized,

    #[error("mean squared displacement before the move is zero")]
    ZeroBefore,

    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("run produced non-finite metrics")]
    NonFiniteMetrics,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
