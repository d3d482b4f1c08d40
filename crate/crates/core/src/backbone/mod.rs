//! Shared feature extractor and readout with hand-written backpropagation.

mod checkpoint;
mod mlp;
mod readout;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use mlp::{apply_update, Activation, Backbone, FeatureTape};
pub use readout::{argmax, softmax, LossKind, Prediction, Readout};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("feature tape was recorded with different parameters")]
    StaleTape,
    #[error("non-finite value in parameters or activations")]
    NonFinite,
    #[error("invalid architecture {0}")]
    BadArchitecture(String),
    #[error("target kind does not match the loss")]
    TargetMismatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
