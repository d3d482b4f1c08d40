//! Experiment runners, CSV logging, SVG plots and the self-test behind the `mtflab` CLI.

mod config;
mod output;
mod plot;
mod runs;
mod selftest;

use std::path::PathBuf;

use thiserror::Error;

use crate::envs::{EnvError, Labeled};
use crate::learners::{
    EvalReport, EwcLearner, LearnError, Learner, LearnerKind, Model, MtfLearner, SgdLearner, StepReport,
};
use crate::memory::MemoryError;
use crate::metrics::MetricsError;

pub use config::{
    default_model, default_mtf, BettiPlan, Experiment, ExperimentConfig, MobiusPlan, PermutedPlan, Plan, RunSpec,
    SEED_ENV,
};
pub use output::{read_csv, CsvTable, STEP_HEADER};
pub use plot::{emit_plots, polyline_svg};
pub use runs::{
    compare_accuracy, run, run_betti, run_mobius, run_permuted, BettiRow, Comparison, RunRecord, Summary,
};
pub use selftest::{selftest, SelfCheck};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{file}: missing columns or rows: {missing}")]
    MissingColumns { file: PathBuf, missing: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 config, 3 data (including I/O), 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) | HarnessError::MissingColumns { .. } | HarnessError::Io { .. } => 3,
            HarnessError::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> HarnessError {
        HarnessError::Io { path: path.into(), source }
    }
}

impl From<EnvError> for HarnessError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig(_) | EnvError::UnsupportedBeta { .. } | EnvError::OutOfRange { .. } => {
                HarnessError::Config(e.to_string())
            }
            EnvError::MissingBaseSet(_) | EnvError::Data(_) => HarnessError::Data(e.to_string()),
        }
    }
}

impl From<LearnError> for HarnessError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::InvalidConfig(_) | LearnError::Memory(MemoryError::InvalidConfig(_)) => {
                HarnessError::Config(e.to_string())
            }
            LearnError::Backbone(crate::backbone::BackboneError::DimMismatch { .. }) => {
                HarnessError::Data(e.to_string())
            }
            _ => HarnessError::Numeric(e.to_string()),
        }
    }
}

impl From<MetricsError> for HarnessError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Learn(l) => l.into(),
            other => HarnessError::Numeric(other.to_string()),
        }
    }
}

impl From<MemoryError> for HarnessError {
    fn from(e: MemoryError) -> Self {
        LearnError::Memory(e).into()
    }
}

/// The three learners behind one concrete type, so runners can reach MTF internals.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum AnyLearner {
    Mtf(MtfLearner),
    Sgd(SgdLearner),
    Ewc(EwcLearner),
}

impl AnyLearner {
    pub fn build(spec: &RunSpec) -> Result<AnyLearner, HarnessError> {
        let model = Model::new(&spec.model, spec.seed)?;
        Ok(match spec.learner {
            LearnerKind::Mtf => AnyLearner::Mtf(MtfLearner::new(model, spec.lr, spec.mtf.clone())?),
            LearnerKind::Sgd => AnyLearner::Sgd(SgdLearner::new(model, spec.lr)),
            LearnerKind::Ewc => AnyLearner::Ewc(EwcLearner::new(model, spec.lr, spec.ewc.clone())),
        })
    }

    pub fn as_mtf(&self) -> Option<&MtfLearner> {
        match self {
            AnyLearner::Mtf(m) => Some(m),
            _ => None,
        }
    }

    fn inner(&self) -> &dyn Learner {
        match self {
            AnyLearner::Mtf(l) => l,
            AnyLearner::Sgd(l) => l,
            AnyLearner::Ewc(l) => l,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Learner {
        match self {
            AnyLearner::Mtf(l) => l,
            AnyLearner::Sgd(l) => l,
            AnyLearner::Ewc(l) => l,
        }
    }
}

impl Learner for AnyLearner {
    fn kind(&self) -> LearnerKind {
        self.inner().kind()
    }

    fn model(&self) -> &Model {
        self.inner().model()
    }

    fn step(&mut self, sample: Labeled<'_>) -> Result<StepReport, LearnError> {
        self.inner_mut().step(sample)
    }

    fn evaluate(&self, set: &[Labeled<'_>]) -> Result<EvalReport, LearnError> {
        self.inner().evaluate(set)
    }

    fn task_boundary(&mut self, recent: &[Labeled<'_>]) -> Result<(), LearnError> {
        self.inner_mut().task_boundary(recent)
    }
}
