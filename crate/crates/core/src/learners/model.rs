use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::backbone::{Activation, Backbone, FeatureTape, LossKind, Prediction, Readout};
use crate::envs::Labeled;
use crate::numkernel::Rng;

/// Architecture of a backbone plus readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `[d_in, hidden.., d_feat]`.
    pub dims: Vec<usize>,
    pub d_out: usize,
    pub activation: Activation,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn mobius() -> ModelSpec {
        ModelSpec { dims: vec![4, 32, 16], d_out: 1, activation: Activation::Tanh, loss: LossKind::SquaredError }
    }

    pub fn digits(d_in: usize) -> ModelSpec {
        ModelSpec { dims: vec![d_in, 128, 64], d_out: 10, activation: Activation::Tanh, loss: LossKind::CrossEntropy }
    }

    /// Small regression net for the loop worlds; under 600 parameters so its
    /// Hessian can be formed densely.
    pub fn betti_probe() -> ModelSpec {
        ModelSpec { dims: vec![2, 16, 16], d_out: 1, activation: Activation::Tanh, loss: LossKind::SquaredError }
    }
}

/// Backbone, readout and loss, with a flat parameter view (backbone first).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub backbone: Backbone,
    pub readout: Readout,
    pub loss: LossKind,
}

/// Forward pass through the un-condensed path.
pub(crate) struct Pass {
    pub z: Vec<f64>,
    pub tape: FeatureTape,
    pub out: Vec<f64>,
}

impl Model {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Model, LearnError> {
        let mut rng = Rng::with_stream(seed, 0x6e6574);
        let backbone = Backbone::random(&spec.dims, spec.activation, &mut rng)?;
        let readout = Readout::random(backbone.d_feat(), spec.d_out, &mut rng);
        Ok(Model { backbone, readout, loss: spec.loss })
    }

    pub fn n_params(&self) -> usize {
        self.backbone.n_params() + self.readout.n_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.backbone.params().to_vec();
        p.extend_from_slice(self.readout.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), LearnError> {
        let nb = self.backbone.n_params();
        if params.len() != self.n_params() {
            return Err(crate::backbone::BackboneError::DimMismatch { expected: self.n_params(), found: params.len() }.into());
        }
        self.backbone.set_params(&params[..nb])?;
        self.readout.set_params(&params[nb..])?;
        Ok(())
    }

    pub(crate) fn pass(&self, x: &[f64]) -> Result<Pass, LearnError> {
        let (z, tape) = self.backbone.forward(x)?;
        let out = self.readout.forward(&z)?;
        Ok(Pass { z, tape, out })
    }

    /// Loss and prediction on the un-condensed path.
    pub fn score(&self, s: &Labeled<'_>) -> Result<(f64, Prediction), LearnError> {
        let z = self.backbone.features(s.x)?;
        let out = self.readout.forward(&z)?;
        let (loss, _) = self.loss.loss_and_grad(&out, s.y)?;
        Ok((loss, self.loss.predict(&out)))
    }

    /// Loss, prediction and the full flat gradient for one sample.
    pub fn loss_and_grad(&self, s: &Labeled<'_>) -> Result<(f64, Prediction, Vec<f64>), LearnError> {
        let p = self.pass(s.x)?;
        let (loss, g_out) = self.loss.loss_and_grad(&p.out, s.y)?;
        let (g_ro, g_z) = self.readout.backward(&p.z, &g_out)?;
        let mut grad = self.backbone.backward_from_feature_grad(&p.tape, &g_z)?;
        grad.extend_from_slice(&g_ro);
        Ok((loss, self.loss.predict(&p.out), grad))
    }

    /// Mean loss over a batch and its flat gradient.
    pub fn batch_loss_and_grad(&self, batch: &[Labeled<'_>]) -> Result<(f64, Vec<f64>), LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let mut total = 0.0;
        let mut grad = vec![0.0; self.n_params()];
        for s in batch {
            let (l, _, g) = self.loss_and_grad(s)?;
            total += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }

    /// `θ ← θ − lr·g` on the flat parameter vector.
    pub fn apply_flat(&mut self, grad: &[f64], lr: f64) -> Result<(), LearnError> {
        let nb = self.backbone.n_params();
        self.backbone.apply_update(&grad[..nb], lr)?;
        crate::backbone::apply_update(self.readout.params_mut(), &grad[nb..], lr)?;
        Ok(())
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
