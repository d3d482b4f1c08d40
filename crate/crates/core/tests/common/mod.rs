#![allow(dead_code)]

pub mod oracle;

use mtflab_core::backbone::Activation;
use mtflab_core::envs::{mobius_stream, Labeled, MobiusConfig, Sample, Target};
use mtflab_core::learners::{Learner, Model, ModelSpec, MtfConfig, MtfLearner, Shield};
use mtflab_core::memory::MemoryConfig;
use mtflab_core::numkernel::Rng;
use mtflab_core::signature::SignatureConfig;

/// MTF learner for the Möbius world with the given backbone activation.
pub fn mobius_mtf(act: Activation, seed: u64, lr: f64) -> MtfLearner {
    let spec = ModelSpec { activation: act, ..ModelSpec::mobius() };
    let cfg = MtfConfig {
        signature: SignatureConfig { spawn_confirm: 1, link_radius: None, ..Default::default() },
        memory: MemoryConfig { max_keys: 2, ..Default::default() },
        shield: Shield::Jacobian { anchors: 4 },
        ..Default::default()
    };
    MtfLearner::new(Model::new(&spec, seed).unwrap(), lr, cfg).unwrap()
}

/// Trains key A on one Möbius phase, then applies `n_b` routed updates from a
/// second input region and returns the largest change of A's condensed features
/// on A's last four inputs.
pub fn key_drift(act: Activation, seed: u64, lr_b: f64, n_b: usize) -> f64 {
    let mut l = mobius_mtf(act, seed, 0.01);
    let stream: Vec<Sample> = mobius_stream(&MobiusConfig { steps_per_phase: 300, n_phases: 1, seed }).unwrap().collect();
    for s in &stream {
        l.step(s.labeled()).unwrap();
    }
    let a = 0;
    let probe = &stream[stream.len() - 4..];
    let before: Vec<Vec<f64>> = probe.iter().map(|s| l.condensed(a, &s.x).unwrap()).collect();
    l.lr = lr_b;
    let mut rng = Rng::new(seed + 100);
    let mut n = 0;
    while n < n_b {
        let u = rng.uniform();
        let x = [0.3, 0.0, u, 1.0 - u];
        if !l.step(Labeled { x: &x, y: Target::Value(u) }).unwrap().warmup {
            n += 1;
        }
    }
    assert_eq!(l.bank().len(), 2, "second region did not get its own key");
    probe
        .iter()
        .zip(&before)
        .flat_map(|(s, b)| {
            let now = l.condensed(a, &s.x).unwrap();
            now.into_iter().zip(b.clone()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}
