use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("score {value} outside [0, 1]")]
    InvalidScore { value: f32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("two pillars scattered to cell ({x_index}, {y_index})")]
    DuplicateCoordinate { x_index: usize, y_index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("probability {0} outside (0, 1)")]
    DomainError(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: file length {len} is not a whole number of records")]
    TruncatedFile { path: PathBuf, len: u64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("header dimensions overflow or exceed payload: {0}")]
    DimensionOverflow(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
