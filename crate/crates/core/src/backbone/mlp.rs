use serde::{Deserialize, Serialize};

use super::BackboneError;
use crate::numkernel::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// No nonlinearity; turns the backbone into a linear map.
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected feature extractor `x -> z`, activation applied after every layer.
///
/// Parameters live in one flat vector: for each layer the row-major weight matrix
/// (`out x in`) followed by its bias. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
    version: u64,
}

/// Activations cached by [`Backbone::forward`]; valid until the parameters change.
#[derive(Clone, Debug)]
pub struct FeatureTape {
    version: u64,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl FeatureTape {
    pub fn features(&self) -> &[f64] {
        self.acts.last().expect("tape has at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

impl Backbone {
    /// Zero-initialised backbone with layer widths `dims = [d_in, hidden.., d_feat]`.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Backbone, BackboneError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(BackboneError::BadArchitecture(format!("{dims:?}")));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for w in dims.windows(2) {
            offsets.push(total);
            total += w[1] * w[0] + w[1];
        }
        offsets.push(total);
        Ok(Backbone { dims: dims.to_vec(), activation, params: vec![0.0; total], offsets, version: 0 })
    }

    /// LeCun-normal weights (std `1/sqrt(fan_in)`), zero biases.
    pub fn random(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Backbone, BackboneError> {
        let mut bb = Backbone::zeros(dims, activation)?;
        for l in 0..bb.n_layers() {
            let (fan_in, fan_out) = (bb.dims[l], bb.dims[l + 1]);
            let std = 1.0 / (fan_in as f64).sqrt();
            let start = bb.offsets[l];
            for w in &mut bb.params[start..start + fan_in * fan_out] {
                *w = std * rng.normal();
            }
        }
        Ok(bb)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn d_feat(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Parameter range `[start, end)` of layer `l` (weights then bias).
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), BackboneError> {
        if params.len() != self.params.len() {
            return Err(BackboneError::DimMismatch { expected: self.params.len(), found: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(BackboneError::NonFinite);
        }
        self.params.copy_from_slice(params);
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, FeatureTape), BackboneError> {
        if x.len() != self.d_in() {
            return Err(BackboneError::DimMismatch { expected: self.d_in(), found: x.len() });
        }
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let next = self.layer_forward(l, acts.last().unwrap());
            acts.push(next);
        }
        let z = acts.last().unwrap().clone();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(BackboneError::NonFinite);
        }
        Ok((z, FeatureTape { version: self.version, acts }))
    }

    /// Forward pass without keeping a tape.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, BackboneError> {
        if x.len() != self.d_in() {
            return Err(BackboneError::DimMismatch { expected: self.d_in(), found: x.len() });
        }
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            a = self.layer_forward(l, &a);
        }
        Ok(a)
    }

    fn layer_forward(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        let w = &self.params[start..start + n_in * n_out];
        let b = &self.params[start + n_in * n_out..start + n_in * n_out + n_out];
        (0..n_out)
            .map(|i| {
                let row = &w[i * n_in..(i + 1) * n_in];
                let pre = b[i] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                self.activation.apply(pre)
            })
            .collect()
    }

    /// Parameter gradient for upstream feature gradient `g_z`.
    pub fn backward_from_feature_grad(&self, tape: &FeatureTape, g_z: &[f64]) -> Result<Vec<f64>, BackboneError> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_backward(tape, g_z, &mut grad)?;
        Ok(grad)
    }

    /// Adds the parameter gradient for `g_z` into `grad`.
    pub fn accumulate_backward(&self, tape: &FeatureTape, g_z: &[f64], grad: &mut [f64]) -> Result<(), BackboneError> {
        if tape.version != self.version {
            return Err(BackboneError::StaleTape);
        }
        if g_z.len() != self.d_feat() {
            return Err(BackboneError::DimMismatch { expected: self.d_feat(), found: g_z.len() });
        }
        if grad.len() != self.params.len() {
            return Err(BackboneError::DimMismatch { expected: self.params.len(), found: grad.len() });
        }
        let mut delta: Vec<f64> = g_z
            .iter()
            .zip(tape.features())
            .map(|(g, &a)| g * self.activation.slope_from_output(a))
            .collect();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let start = self.offsets[l];
            let input = &tape.acts[l];
            for i in 0..n_out {
                let d = delta[i];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[start + i * n_in..start + (i + 1) * n_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[start + n_in * n_out + i] += d;
            }
            if l > 0 {
                let w = &self.params[start..start + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for i in 0..n_out {
                    let d = delta[i];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wij) in prev.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                        *p += d * wij;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= self.activation.slope_from_output(a);
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// `θ ← θ − lr·g`.
    pub fn apply_update(&mut self, grads: &[f64], lr: f64) -> Result<(), BackboneError> {
        apply_update(&mut self.params, grads, lr)?;
        self.version += 1;
        Ok(())
    }
}

/// In-place `params -= lr * grads`, rejecting shape mismatches and non-finite results.
pub fn apply_update(params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), BackboneError> {
    if params.len() != grads.len() {
        return Err(BackboneError::DimMismatch { expected: params.len(), found: grads.len() });
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(BackboneError::NonFinite);
    }
    Ok(())
}
