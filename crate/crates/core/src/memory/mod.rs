//! Key-indexed memory of feature subspaces.
//!
//! Each key owns a block of feature coordinates and a whitening warp inside it.
//! In hard mode blocks are disjoint so cross-key overlap is exactly zero; in soft
//! mode all keys share the full space and a penalty keeps warps apart.

mod bank;
mod persist;

use thiserror::Error;

use crate::numkernel::LinalgError;

pub use bank::{eigen_inv_sqrt, whitening_gap, MemoryBank, MemoryConfig, MemoryEntry, OrthoMode, Overlap, RefineReport};
pub use persist::{load_bank, save_bank, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("no free subspace block for key {key}")]
    CapacityExhausted { key: String },
    #[error("key {0} is not in memory")]
    UnknownKey(String),
    #[error("feature dimension mismatch: need {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("regularised second moment is not positive definite")]
    NotSpd,
    #[error("refinement batch is empty")]
    EmptyBatch,
    #[error("invalid memory config: {0}")]
    InvalidConfig(String),
    #[error("unsupported memory file: {0}")]
    FormatVersion(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(LinalgError),
}

impl From<LinalgError> for MemoryError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::DimMismatch { expected, found } => MemoryError::DimMismatch { expected, found },
            LinalgError::NotSpd => MemoryError::NotSpd,
            other => MemoryError::Linalg(other),
        }
    }
}
