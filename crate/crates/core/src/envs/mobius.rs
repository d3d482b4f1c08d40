use serde::{Deserialize, Serialize};

use super::{EnvError, Sample, Target};
use crate::numkernel::Rng;

/// Sheet orientation of the Möbius world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Plus,
    Minus,
}

impl Parity {
    pub fn sign(self) -> i64 {
        match self {
            Parity::Plus => 1,
            Parity::Minus => -1,
        }
    }

    /// Parity of phase `p`: even phases are `Plus`.
    pub fn of_phase(p: usize) -> Parity {
        if p % 2 == 0 {
            Parity::Plus
        } else {
            Parity::Minus
        }
    }
}

/// Observation for corridor position `u` on sheet `s`.
///
/// `Plus` maps to `[u, 1-u, 0, 0]` and `Minus` to `[0, 0, 1-u, u]`, so the two sheets
/// live in disjoint coordinate planes and are glued by `(0, +) ~ (1, -)`.
pub fn mobius_observe(u: f64, s: Parity) -> Result<[f64; 4], EnvError> {
    if !(0.0..=1.0).contains(&u) {
        return Err(EnvError::OutOfRange { value: u });
    }
    Ok(match s {
        Parity::Plus => [u, 1.0 - u, 0.0, 0.0],
        Parity::Minus => [0.0, 0.0, 1.0 - u, u],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobiusConfig {
    /// Steps per phase (T).
    pub steps_per_phase: usize,
    pub n_phases: usize,
    pub seed: u64,
}

impl Default for MobiusConfig {
    fn default() -> Self {
        MobiusConfig { steps_per_phase: 500, n_phases: 4, seed: 0 }
    }
}

/// Stream of `steps_per_phase * n_phases` samples with alternating parity and `y = u`.
#[derive(Clone, Debug)]
pub struct MobiusStream {
    cfg: MobiusConfig,
    rng: Rng,
    t: usize,
}

pub fn mobius_stream(cfg: &MobiusConfig) -> Result<MobiusStream, EnvError> {
    if cfg.steps_per_phase == 0 {
        return Err(EnvError::InvalidConfig("steps_per_phase must be at least 1".into()));
    }
    Ok(MobiusStream { cfg: cfg.clone(), rng: Rng::new(cfg.seed), t: 0 })
}

impl Iterator for MobiusStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.t >= self.cfg.steps_per_phase * self.cfg.n_phases {
            return None;
        }
        let parity = Parity::of_phase(self.t / self.cfg.steps_per_phase);
        let u = self.rng.uniform();
        let x = mobius_observe(u, parity).expect("u drawn from [0, 1)");
        let sample = Sample { x: x.to_vec(), y: Target::Value(u), phase: parity.sign(), t: self.t };
        self.t += 1;
        Some(sample)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.cfg.steps_per_phase * self.cfg.n_phases - self.t;
        (left, Some(left))
    }
}

/// Fixed evaluation grid of `n` evenly spaced corridor positions on one sheet.
pub fn mobius_probe(parity: Parity, n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let u = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let x = mobius_observe(u, parity).expect("grid inside [0, 1]");
            Sample { x: x.to_vec(), y: Target::Value(u), phase: parity.sign(), t: i }
        })
        .collect()
}
