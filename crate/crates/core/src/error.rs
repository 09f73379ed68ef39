use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scheme: {0}")]
    InvalidScheme(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("degenerate stepsize schedule: {0}")]
    DegenerateSchedule(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("infinite weight: {0}")]
    InfiniteWeight(String),

    #[error("undefined weight at frequency {index}: inclusion probability is zero")]
    UndefinedWeight { index: usize },

    #[error("degenerate normalization: the empirical risk gradient is zero")]
    DegenerateNormalization,

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line driver: 1 validation, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. }
            | Error::DegenerateSchedule(_)
            | Error::DegenerateNormalization
            | Error::InfiniteWeight(_)
            | Error::UndefinedWeight { .. } => 2,
            Error::Io { .. } | Error::Csv { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch { expected: expected.to_string(), actual: actual.to_string() }
    }
}
