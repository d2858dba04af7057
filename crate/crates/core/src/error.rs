use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable path {path}: {reason}")]
    UnreadablePath { path: PathBuf, reason: String },

    #[error("duplicate {what}: {value}")]
    Duplicate { what: &'static str, value: String },

    #[error("failed to decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("patch reference out of bounds: {0}")]
    OutOfBounds(String),

    #[error("zero-variance patch in normalized cross-correlation")]
    ZeroVariance,

    #[error("not enough samples: need at least {need}, have {have}")]
    NotEnoughSamples { need: usize, have: usize },

    #[error("no alive clusters remain: {0}")]
    NoAliveClusters(String),

    #[error("unknown image id: {0}")]
    UnknownImage(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("cluster {0} has zero total firings")]
    ZeroFirings(u32),

    #[error("synthetic corpus infeasible: {0}")]
    SynthInfeasible(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
