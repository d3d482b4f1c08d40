use serde::{Deserialize, Serialize};

use super::BackboneError;
use crate::envs::Target;
use crate::numkernel::Rng;

/// Linear map `d_in -> d_out` plus bias. Parameters: row-major weights then bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    d_in: usize,
    d_out: usize,
    params: Vec<f64>,
}

impl Readout {
    pub fn zeros(d_in: usize, d_out: usize) -> Readout {
        Readout { d_in, d_out, params: vec![0.0; d_out * d_in + d_out] }
    }

    pub fn random(d_in: usize, d_out: usize, rng: &mut Rng) -> Readout {
        let mut r = Readout::zeros(d_in, d_out);
        let std = 1.0 / (d_in as f64).sqrt();
        for w in &mut r.params[..d_in * d_out] {
            *w = std * rng.normal();
        }
        r
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), BackboneError> {
        if params.len() != self.params.len() {
            return Err(BackboneError::DimMismatch { expected: self.params.len(), found: params.len() });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Index of weight `(out, input)` in the flat parameter vector.
    pub fn weight_index(&self, out: usize, input: usize) -> usize {
        out * self.d_in + input
    }

    /// Index of the bias of output `out`.
    pub fn bias_index(&self, out: usize) -> usize {
        self.d_in * self.d_out + out
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>, BackboneError> {
        if z.len() != self.d_in {
            return Err(BackboneError::DimMismatch { expected: self.d_in, found: z.len() });
        }
        Ok((0..self.d_out)
            .map(|o| {
                let row = &self.params[o * self.d_in..(o + 1) * self.d_in];
                self.params[self.bias_index(o)] + row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect())
    }

    /// Returns (parameter gradient, input gradient) for output gradient `g_y` at input `z`.
    pub fn backward(&self, z: &[f64], g_y: &[f64]) -> Result<(Vec<f64>, Vec<f64>), BackboneError> {
        if z.len() != self.d_in || g_y.len() != self.d_out {
            return Err(BackboneError::DimMismatch { expected: self.d_out, found: g_y.len() });
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut g_z = vec![0.0; self.d_in];
        for (o, &g) in g_y.iter().enumerate() {
            let row = &self.params[o * self.d_in..(o + 1) * self.d_in];
            for i in 0..self.d_in {
                grad[o * self.d_in + i] = g * z[i];
                g_z[i] += g * row[i];
            }
            grad[self.d_in * self.d_out + o] = g;
        }
        Ok((grad, g_z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(ŷ − y)²` on a single output.
    SquaredError,
    /// Softmax cross-entropy over class logits.
    CrossEntropy,
}

/// What a model predicted for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction {
    Value(f64),
    Class(usize),
}

impl LossKind {
    /// Loss and its gradient with respect to the readout output.
    pub fn loss_and_grad(self, out: &[f64], y: Target) -> Result<(f64, Vec<f64>), BackboneError> {
        match (self, y) {
            (LossKind::SquaredError, Target::Value(v)) => {
                let [yhat] = out else {
                    return Err(BackboneError::DimMismatch { expected: 1, found: out.len() });
                };
                let r = yhat - v;
                Ok((r * r, vec![2.0 * r]))
            }
            (LossKind::CrossEntropy, Target::Class(c)) => {
                if c >= out.len() {
                    return Err(BackboneError::DimMismatch { expected: out.len(), found: c + 1 });
                }
                let probs = softmax(out);
                let loss = -(probs[c].max(f64::MIN_POSITIVE)).ln();
                let mut g = probs;
                g[c] -= 1.0;
                Ok((loss, g))
            }
            _ => Err(BackboneError::TargetMismatch),
        }
    }

    pub fn predict(self, out: &[f64]) -> Prediction {
        match self {
            LossKind::SquaredError => Prediction::Value(out[0]),
            LossKind::CrossEntropy => Prediction::Class(argmax(out)),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
