use thiserror::Error;

/// Errors for network construction, training and data handling.
///
/// Transport failures have their own type, [`crate::transport::TransportError`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parameter layouts differ")]
    LayoutMismatch,

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no source samples with class {0}")]
    EmptyClassSubset(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Transport(#[from] crate::transport::TransportError),
}

pub type Result<T> = std::result::Result<T, Error>;
