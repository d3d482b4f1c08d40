//! Benchmark data streams: the Möbius parity world, Betti-controlled loop worlds and
//! permuted digit tasks.

mod betti;
mod digits;
mod mobius;

use thiserror::Error;

pub use betti::{betti_world, BettiConfig, BettiWorld, DiskChart, MAX_BETA1};
pub use digits::{
    apply_permutation, invert_permutation, permuted_stream, permuted_tasks, BaseSet, DigitSet,
    PermutedConfig, PermutedTask,
};
pub use mobius::{mobius_observe, mobius_probe, mobius_stream, MobiusConfig, MobiusStream, Parity};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("value {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("beta1 = {beta1} is not supported (maximum {MAX_BETA1})")]
    UnsupportedBeta { beta1: usize },
    #[error("base digit set not found: {0}")]
    MissingBaseSet(String),
    #[error("malformed data: {0}")]
    Data(String),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

/// Supervision target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Value(f64),
    Class(usize),
}

/// One environment emission.
///
/// `phase` is the hidden ground-truth task label. Learners receive only `x` and `y`
/// (see [`Sample::labeled`]), so the label can reach metrics and logs but never an
/// update path.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Target,
    pub phase: i64,
    pub t: usize,
}

/// The learner-visible part of a sample.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub x: &'a [f64],
    pub y: Target,
}

impl Sample {
    pub fn labeled(&self) -> Labeled<'_> {
        Labeled { x: &self.x, y: self.y }
    }
}
