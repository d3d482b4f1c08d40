use serde::Serialize;

use super::config::{Experiment, Plan, RunSpec};
use super::runs::{run, Summary};
use crate::envs::{mobius_stream, Labeled, MobiusConfig, Target};
use crate::learners::{LearnerKind, Model, ModelSpec};
use crate::memory::{MemoryBank, MemoryConfig};
use crate::numkernel::{newton_schulz_inv_sqrt, sym_eigen, Mat, Rng};
use crate::signature::{normalized_laplacian, spectral_signature, SpectralKey};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<(bool, String), String>) -> SelfCheck {
    match result {
        Ok((passed, detail)) => SelfCheck { name, passed, detail },
        Err(detail) => SelfCheck { name, passed: false, detail },
    }
}

/// Quick invariant suite: linear-algebra oracles, graph spectra, gradients, whitening,
/// routing isolation and determinism. Runs in a few seconds.
pub fn selftest() -> Vec<SelfCheck> {
    vec![
        check("eigen_vs_quadratic", eigen_vs_quadratic()),
        check("newton_schulz_vs_eigen", ns_vs_eigen()),
        check("zero_multiplicity_vs_components", zero_mult_vs_components()),
        check("gradient_vs_finite_difference", grad_vs_fd()),
        check("whitening_contract", whitening_contract()),
        check("hard_routing_overlap", hard_overlap()),
        check("rerun_determinism", determinism()),
    ]
}

fn eigen_vs_quadratic() -> Result<(bool, String), String> {
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (a, b, d) = (rng.normal(), rng.normal(), rng.normal());
        let m = Mat::from_rows(&[&[a, b], &[b, d]]);
        let e = sym_eigen(&m).map_err(|e| e.to_string())?;
        let (tr, det) = (a + d, a * d - b * b);
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        worst = worst.max((e.values[0] - (tr / 2.0 - disc)).abs()).max((e.values[1] - (tr / 2.0 + disc)).abs());
    }
    Ok((worst <= 1e-8, format!("max error {worst:.2e}")))
}

fn random_spd(rng: &mut Rng, n: usize) -> Mat {
    let a = Mat::from_vec(n, n, rng.normal_vec(n * n, 1.0)).expect("square");
    let mut s = a.matmul(&a.transpose()).expect("square");
    s.add_diag(0.5);
    s
}

fn ns_vs_eigen() -> Result<(bool, String), String> {
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    for n in 2..6 {
        let s = random_spd(&mut rng, n);
        let ns = newton_schulz_inv_sqrt(&s, 200, 1e-12).map_err(|e| e.to_string())?;
        let e = sym_eigen(&s).map_err(|e| e.to_string())?;
        let mut ref_m = Mat::zeros(n, n);
        for k in 0..n {
            let v = e.vectors.col(k);
            let w = 1.0 / e.values[k].sqrt();
            for i in 0..n {
                for j in 0..n {
                    ref_m[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        worst = worst.max(ns.max_abs_diff(&ref_m));
    }
    Ok((worst <= 1e-5, format!("max error {worst:.2e}")))
}

fn components(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut count = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            count -= 1;
        }
    }
    count
}

fn zero_mult_vs_components() -> Result<(bool, String), String> {
    let mut rng = Rng::new(3);
    let mut mismatches = 0;
    for _ in 0..20 {
        let n = 6 + rng.below(10);
        let mut w = Mat::zeros(n, n);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.uniform() < 0.15 {
                    let v = 0.5 + rng.uniform();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                    edges.push((i, j));
                }
            }
        }
        let l = normalized_laplacian(&w).map_err(|e| e.to_string())?;
        let sig = spectral_signature(&l, 1, 1e-8).map_err(|e| e.to_string())?;
        mismatches += usize::from(sig.zero_mult != components(n, &edges));
    }
    Ok((mismatches == 0, format!("{mismatches} of 20 graphs disagree")))
}

fn grad_vs_fd() -> Result<(bool, String), String> {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let model = Model::new(&ModelSpec::mobius(), seed).map_err(|e| e.to_string())?;
        let x = [0.2, 0.8, 0.0, 0.0];
        let s = Labeled { x: &x, y: Target::Value(0.2) };
        let (_, _, g) = model.loss_and_grad(&s).map_err(|e| e.to_string())?;
        let p = model.params();
        let mut probe = model.clone();
        for i in (0..p.len()).step_by(37) {
            let h = 1e-6;
            let mut q = p.clone();
            q[i] += h;
            probe.set_params(&q).map_err(|e| e.to_string())?;
            let lp = probe.score(&s).map_err(|e| e.to_string())?.0;
            q[i] -= 2.0 * h;
            probe.set_params(&q).map_err(|e| e.to_string())?;
            let lm = probe.score(&s).map_err(|e| e.to_string())?.0;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1e-6));
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn whitening_contract() -> Result<(bool, String), String> {
    let mut rng = Rng::new(4);
    let z: Vec<Vec<f64>> = (0..500).map(|_| vec![2.0 * rng.normal(), rng.normal()]).collect();
    let mut bank = MemoryBank::new(2, MemoryConfig { max_keys: 1, ..Default::default() }).map_err(|e| e.to_string())?;
    let key = SpectralKey { zero_mult: 1, spec_q: vec![], support_q: vec![], fiber: None };
    let idx = bank.retrieve_or_allocate(&key).map_err(|e| e.to_string())?;
    bank.refine_warp(idx, &z).map_err(|e| e.to_string())?;
    let entry = bank.entry(idx);
    let mut m = Mat::zeros(2, 2);
    for v in &z {
        let c = entry.condense(v).map_err(|e| e.to_string())?;
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] += c[i] * c[j] / z.len() as f64;
            }
        }
    }
    let gap = m.sub(&Mat::identity(2).scaled(0.5)).map_err(|e| e.to_string())?.frobenius_norm();
    Ok((gap <= 5e-2, format!("gap {gap:.2e}")))
}

fn short_mobius(learner: LearnerKind) -> RunSpec {
    let mut spec = RunSpec::preset(Experiment::Mobius, learner, 0);
    if let Plan::Mobius(p) = &mut spec.plan {
        p.steps_per_phase = 120;
    }
    spec
}

fn hard_overlap() -> Result<(bool, String), String> {
    let spec = short_mobius(LearnerKind::Mtf);
    let mut l = super::AnyLearner::build(&spec).map_err(|e| e.to_string())?;
    let stream = mobius_stream(&MobiusConfig { steps_per_phase: 120, n_phases: 2, seed: 0 }).map_err(|e| e.to_string())?;
    for s in stream {
        crate::learners::Learner::step(&mut l, s.labeled()).map_err(|e| e.to_string())?;
    }
    let bank = l.as_mtf().expect("mtf learner").bank();
    let e = bank.entries();
    if e.len() < 2 {
        return Ok((false, format!("only {} keys allocated", e.len())));
    }
    let o = bank.cross_overlap(&e[0].key, &e[1].key).map_err(|e| e.to_string())?;
    Ok((o.value == 0.0, format!("overlap {:e}", o.value)))
}

fn determinism() -> Result<(bool, String), String> {
    let base = std::env::temp_dir().join(format!("mtflab-selftest-{}", std::process::id()));
    let spec = short_mobius(LearnerKind::Mtf);
    let result = (|| {
        let (a, b) = (base.join("a"), base.join("b"));
        let ra = run(&spec, &a).map_err(|e| e.to_string())?;
        let rb = run(&spec, &b).map_err(|e| e.to_string())?;
        let mut same = ra == rb && matches!(ra.summary, Summary::Mobius { .. });
        for f in &ra.files {
            let fa = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
            let fb = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
            same &= fa == fb;
        }
        Ok((same, format!("{} files compared", ra.files.len())))
    })();
    let _ = std::fs::remove_dir_all(&base);
    result
}
