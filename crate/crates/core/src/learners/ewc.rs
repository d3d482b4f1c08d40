use serde::{Deserialize, Serialize};

use super::model::l2;
use super::{summarize, EvalReport, LearnError, Learner, LearnerKind, Model, StepReport};
use crate::envs::Labeled;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EwcConfig {
    pub lambda: f64,
    /// Samples used for each Fisher estimate.
    pub n_fisher: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        EwcConfig { lambda: 100.0, n_fisher: 200 }
    }
}

/// Diagonal Fisher estimate and parameter anchor of one consolidated task.
#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    pub fisher: Vec<f64>,
    pub anchor: Vec<f64>,
}

/// SGD plus the elastic penalty `(λ/2) Σ_tasks Σ_i F_i (θ_i − θ*_i)²`.
#[derive(Clone, Debug)]
pub struct EwcLearner {
    pub model: Model,
    pub lr: f64,
    pub cfg: EwcConfig,
    pub consolidated: Vec<EwcState>,
    pub steps: u64,
}

impl EwcLearner {
    pub fn new(model: Model, lr: f64, cfg: EwcConfig) -> EwcLearner {
        EwcLearner { model, lr, cfg, consolidated: Vec::new(), steps: 0 }
    }

    /// Penalty value and its gradient at the current parameters.
    pub fn penalty(&self) -> (f64, Vec<f64>) {
        let theta = self.model.params();
        let mut value = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for st in &self.consolidated {
            for i in 0..theta.len() {
                let d = theta[i] - st.anchor[i];
                value += 0.5 * self.cfg.lambda * st.fisher[i] * d * d;
                grad[i] += self.cfg.lambda * st.fisher[i] * d;
            }
        }
        (value, grad)
    }

    /// Estimates the diagonal Fisher from `samples` (the last `n_fisher` are used)
    /// and anchors the current parameters.
    pub fn consolidate(&mut self, samples: &[Labeled<'_>]) -> Result<(), LearnError> {
        if samples.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let used = &samples[samples.len().saturating_sub(self.cfg.n_fisher)..];
        let mut fisher = vec![0.0; self.model.n_params()];
        for s in used {
            let (_, _, g) = self.model.loss_and_grad(s)?;
            fisher.iter_mut().zip(&g).for_each(|(f, gi)| *f += gi * gi);
        }
        let n = used.len() as f64;
        fisher.iter_mut().for_each(|f| *f /= n);
        self.consolidated.push(EwcState { fisher, anchor: self.model.params() });
        Ok(())
    }
}

impl Learner for EwcLearner {
    fn kind(&self) -> LearnerKind {
        LearnerKind::Ewc
    }

    fn model(&self) -> &Model {
        &self.model
    }

    fn step(&mut self, s: Labeled<'_>) -> Result<StepReport, LearnError> {
        let (loss, prediction, mut grad) = self.model.loss_and_grad(&s)?;
        if !self.consolidated.is_empty() {
            let (_, pg) = self.penalty();
            grad.iter_mut().zip(&pg).for_each(|(g, p)| *g += p);
        }
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

    fn task_boundary(&mut self, recent: &[Labeled<'_>]) -> Result<(), LearnError> {
        self.consolidate(recent)
    }
}
