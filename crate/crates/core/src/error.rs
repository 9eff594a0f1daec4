use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed matrix header: {0}")]
    MalformedHeader(String),

    #[error("matrix payload size mismatch: expected {expected} scalars, found {found_bytes} bytes")]
    SizeMismatch { expected: usize, found_bytes: usize },

    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row {row} of {which} has norm {norm}, expected unit length")]
    NotUnitNorm {
        which: &'static str,
        row: usize,
        norm: f64,
    },

    #[error("similarity {s} at ({i}, {j}) is too close to +/-1 for the exact collision derivative")]
    Singularity { i: usize, j: usize, s: f64 },

    #[error("tau_bound {tau_bound} is smaller than the largest squared row norm {max_sq_norm}")]
    TauBoundTooSmall { tau_bound: f64, max_sq_norm: f64 },

    #[error("hash code {code} out of range for {buckets} buckets")]
    CodeOutOfRange { code: u32, buckets: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } => 10,
            Error::MalformedHeader(_) => 11,
            Error::SizeMismatch { .. } => 12,
            Error::NonFinite { .. } => 13,
            Error::DimensionMismatch(_) => 14,
            Error::NotUnitNorm { .. } => 15,
            Error::Singularity { .. } => 16,
            Error::TauBoundTooSmall { .. } => 17,
            Error::CodeOutOfRange { .. } => 18,
            Error::InvalidConfig(_) => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
