use super::model::l2;
use super::{summarize, EvalReport, LearnError, Learner, LearnerKind, Model, StepReport};
use crate::envs::Labeled;

/// Plain online SGD on the full, unrouted gradient.
#[derive(Clone, Debug)]
pub struct SgdLearner {
    pub model: Model,
    pub lr: f64,
    pub steps: u64,
}

impl SgdLearner {
    pub fn new(model: Model, lr: f64) -> SgdLearner {
        SgdLearner { model, lr, steps: 0 }
    }
}

impl Learner for SgdLearner {
    fn kind(&self) -> LearnerKind {
        LearnerKind::Sgd
    }

    fn model(&self) -> &Model {
        &self.model
    }

    fn step(&mut self, s: Labeled<'_>) -> Result<StepReport, LearnError> {
        let (loss, prediction, grad) = self.model.loss_and_grad(&s)?;
        self.model.apply_flat(&grad, self.lr)?;
        self.steps += 1;
        Ok(StepReport { loss, prediction, grad_norm: l2(&grad), active_key: None, warmup: false })
    }

    fn evaluate(&self, set: &[Labeled<'_>]) -> Result<EvalReport, LearnError> {
        summarize(set, |s| {
            let (l, p) = self.model.score(s)?;
            Ok((l, p, false))
        })
    }
}
