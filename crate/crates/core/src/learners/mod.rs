//! Trainable agents behind one step/evaluate interface: the subspace-routed MTF
//! learner and the plain SGD and EWC baselines.

mod ewc;
mod model;
mod mtf;
mod sgd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{BackboneError, Prediction};
use crate::envs::Labeled;
use crate::memory::MemoryError;
use crate::signature::SignatureError;

pub use ewc::{EwcConfig, EwcLearner, EwcState};
pub use model::{Model, ModelSpec};
pub use mtf::{MtfConfig, MtfLearner, Shield};
pub use sgd::SgdLearner;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Mtf,
    Sgd,
    Ewc,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Mtf => "mtf",
            LearnerKind::Sgd => "sgd",
            LearnerKind::Ewc => "ewc",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mtf" => Ok(LearnerKind::Mtf),
            "sgd" => Ok(LearnerKind::Sgd),
            "ewc" => Ok(LearnerKind::Ewc),
            other => Err(format!("unknown learner {other:?}")),
        }
    }
}

/// What one training step did. `loss` is measured before the update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub prediction: Prediction,
    /// Euclidean norm of the gradient actually applied.
    pub grad_norm: f64,
    pub active_key: Option<String>,
    pub warmup: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean_loss: f64,
    /// Fraction correct, for classification targets.
    pub accuracy: Option<f64>,
    /// Samples whose key was not in memory and were scored on the un-condensed path.
    pub misses: usize,
}

pub trait Learner {
    fn kind(&self) -> LearnerKind;

    fn model(&self) -> &Model;

    /// One online update on a single labelled sample.
    fn step(&mut self, sample: Labeled<'_>) -> Result<StepReport, LearnError>;

    /// Scores a set without changing any state.
    fn evaluate(&self, set: &[Labeled<'_>]) -> Result<EvalReport, LearnError>;

    /// Schedule-driven task boundary. Only EWC acts on it.
    fn task_boundary(&mut self, _recent: &[Labeled<'_>]) -> Result<(), LearnError> {
        Ok(())
    }
}

/// Mean loss and accuracy of `score` over `set`.
pub(crate) fn summarize<F>(set: &[Labeled<'_>], mut score: F) -> Result<EvalReport, LearnError>
where
    F: FnMut(&Labeled<'_>) -> Result<(f64, Prediction, bool), LearnError>,
{
    if set.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut classified = 0usize;
    let mut misses = 0usize;
    for s in set {
        let (loss, pred, missed) = score(s)?;
        total += loss;
        if let (Prediction::Class(p), crate::envs::Target::Class(c)) = (pred, s.y) {
            classified += 1;
            correct += usize::from(p == c);
        }
        misses += usize::from(missed);
    }
    Ok(EvalReport {
        mean_loss: total / set.len() as f64,
        accuracy: (classified > 0).then(|| correct as f64 / classified as f64),
        misses,
    })
}
