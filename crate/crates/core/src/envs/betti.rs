use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{EnvError, Sample, Target};
use crate::numkernel::Rng;

pub const MAX_BETA1: usize = 8;

/// Chart used for the contractible (beta1 = 0) world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiskChart {
    /// Rescaled first coordinate; a global chart with no discontinuity.
    Linear,
    /// Polar angle fraction, cut along the positive first axis like the loops.
    Angular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BettiConfig {
    pub beta1: usize,
    /// Total number of points across all components.
    pub n_samples: usize,
    /// Std-dev of Gaussian noise added to each coordinate.
    pub noise: f64,
    pub seed: u64,
    /// Distance between neighbouring loop centres.
    pub spacing: f64,
    pub disk_chart: DiskChart,
}

impl Default for BettiConfig {
    fn default() -> Self {
        BettiConfig {
            beta1: 1,
            n_samples: 256,
            noise: 0.01,
            seed: 0,
            spacing: 5.0,
            disk_chart: DiskChart::Linear,
        }
    }
}

/// Planar point set with `beta1` independent loops and chart-coordinate targets.
#[derive(Clone, Debug)]
pub struct BettiWorld {
    pub centers: Vec<[f64; 2]>,
    pub samples: Vec<Sample>,
}

/// Samples a disjoint union of `beta1` unit circles on a row, or the unit disk for `beta1 = 0`.
///
/// Each sample's `phase` is the index of its component and its target is the chart
/// coordinate in [0, 1) of the observed (noisy) point around that component's centre.
pub fn betti_world(cfg: &BettiConfig) -> Result<BettiWorld, EnvError> {
    if cfg.beta1 > MAX_BETA1 {
        return Err(EnvError::UnsupportedBeta { beta1: cfg.beta1 });
    }
    if cfg.n_samples < 100 {
        return Err(EnvError::InvalidConfig(format!("n_samples {} is below 100", cfg.n_samples)));
    }
    if !(cfg.noise >= 0.0) || !(cfg.spacing > 2.0) {
        return Err(EnvError::InvalidConfig("noise must be >= 0 and spacing > 2".into()));
    }
    let components = cfg.beta1.max(1);
    let offset = cfg.spacing * (components as f64 - 1.0) / 2.0;
    let centers: Vec<[f64; 2]> = (0..components)
        .map(|j| [cfg.spacing * j as f64 - offset, 0.0])
        .collect();

    let mut rng = Rng::new(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for t in 0..cfg.n_samples {
        let j = t % components;
        let c = centers[j];
        let (dx, dy) = if cfg.beta1 == 0 {
            let r = rng.uniform().sqrt();
            let a = TAU * rng.uniform();
            (r * a.cos(), r * a.sin())
        } else {
            let a = TAU * rng.uniform();
            (a.cos(), a.sin())
        };
        let px = c[0] + dx + cfg.noise * rng.normal();
        let py = c[1] + dy + cfg.noise * rng.normal();
        let y = if cfg.beta1 == 0 && cfg.disk_chart == DiskChart::Linear {
            ((px - c[0] + 1.0) / 2.0).clamp(0.0, 1.0 - f64::EPSILON)
        } else {
            angle_fraction(px - c[0], py - c[1])
        };
        samples.push(Sample { x: vec![px, py], y: Target::Value(y), phase: j as i64, t });
    }
    Ok(BettiWorld { centers, samples })
}

/// Polar angle of (dx, dy) as a fraction of a full turn in [0, 1).
fn angle_fraction(dx: f64, dy: f64) -> f64 {
    let f = dy.atan2(dx).rem_euclid(TAU) / TAU;
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}
