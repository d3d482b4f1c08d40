use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{BettiPlan, Experiment, MobiusPlan, PermutedPlan, Plan, RunSpec};
use super::output::{num, opt, read_csv, CsvOut, STEP_HEADER};
use super::{AnyLearner, HarnessError};
use crate::backbone::Prediction;
use crate::envs::{
    betti_world, mobius_probe, mobius_stream, permuted_stream, BettiConfig, Labeled, MobiusConfig, Parity,
    PermutedConfig, Sample, Target,
};
use crate::learners::{Learner, LearnerKind, MtfLearner, StepReport};
use crate::memory::whitening_gap;
use crate::metrics::{
    adaptation_latency, average_accuracy, hessian_negative_density, saddle_proxy, MetricsError, SaddleThresholds,
    Trace, TraceRow, MAX_HESSIAN_PARAMS,
};
use crate::numkernel::Rng;

/// Steps per window for the saddle proxy on Möbius runs.
const SADDLE_WINDOW: usize = 50;
/// Leading steps whose gradient norms calibrate the saddle threshold.
const SADDLE_WARMUP: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BettiRow {
    pub beta1: usize,
    /// First epoch (1-based) after which the full-set loss was below epsilon.
    pub converged_epoch: Option<usize>,
    pub converged_step: Option<usize>,
    pub epochs_run: usize,
    pub final_loss: f64,
    /// Hessian negative density at the mid-training checkpoint (single-metric learners only).
    pub mid_density: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Summary {
    Mobius {
        flips: Vec<usize>,
        /// `None` where the loss never fell below epsilon after the flip.
        latencies: Vec<Option<usize>>,
        final_loss: f64,
        /// Largest pairwise subspace overlap across stored keys (MTF with two or more keys).
        overlap: Option<f64>,
        n_keys: usize,
        stagnant_windows: usize,
    },
    Betti {
        rows: Vec<BettiRow>,
    },
    Permuted {
        /// Average accuracy over the tasks seen so far, after each task.
        average_accuracy: Vec<f64>,
        /// Accuracy on every task after the last one.
        final_accuracy: Vec<f64>,
    },
}

/// Outcome of one run. Written to `record.json`; contains no timings, so it is
/// reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: Experiment,
    pub learner: LearnerKind,
    pub seed: u64,
    pub digest: String,
    pub files: Vec<String>,
    pub summary: Summary,
}

/// Runs `spec` and writes its config, CSVs and record into `out` (created if needed).
pub fn run(spec: &RunSpec, out: &Path) -> Result<RunRecord, HarnessError> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let cfg_path = out.join("config.json");
    let pretty = serde_json::to_string_pretty(spec).expect("run spec serialises") + "\n";
    fs::write(&cfg_path, pretty).map_err(|e| HarnessError::io(&cfg_path, e))?;
    let (mut files, summary) = match &spec.plan {
        Plan::Mobius(p) => run_mobius(spec, p, out)?,
        Plan::Betti(p) => run_betti(spec, p, out)?,
        Plan::Permuted(p) => run_permuted(spec, p, out)?,
    };
    files.insert(0, "config.json".into());
    let record = RunRecord {
        experiment: spec.experiment,
        learner: spec.learner,
        seed: spec.seed,
        digest: spec.digest(),
        files,
        summary,
    };
    let rec_path = out.join("record.json");
    let text = serde_json::to_string_pretty(&record).expect("record serialises") + "\n";
    fs::write(&rec_path, text).map_err(|e| HarnessError::io(&rec_path, e))?;
    Ok(record)
}

fn checked_step(learner: &mut AnyLearner, s: &Sample, step: usize) -> Result<StepReport, HarnessError> {
    let r = learner.step(s.labeled())?;
    if !r.loss.is_finite() || !r.grad_norm.is_finite() {
        return Err(HarnessError::Numeric(format!("non-finite loss or gradient at step {step}")));
    }
    Ok(r)
}

fn step_row(step: usize, loss: f64, acc: Option<f64>, r: &StepReport, phase: i64) -> [String; 7] {
    [
        step.to_string(),
        num(loss),
        opt(acc.map(num)),
        num(r.grad_norm),
        r.active_key.clone().unwrap_or_default(),
        phase.to_string(),
        r.warmup.to_string(),
    ]
}

/// Per-key memory diagnostics: block placement, usage and how far each warp is
/// from whitening its key's features.
fn write_keys(m: &MtfLearner, out: &Path, files: &mut Vec<String>) -> Result<(), HarnessError> {
    let mut w = CsvOut::create(&out.join("keys.csv"), &["key", "block_start", "block_len", "hits", "whitening_gap"])?;
    for e in m.bank().entries() {
        let gap = whitening_gap(&e.warp, &e.cov)?;
        w.row(&[
            e.key.canonical(),
            e.block.first().copied().unwrap_or(0).to_string(),
            e.block.len().to_string(),
            e.hits.to_string(),
            num(gap),
        ])?;
    }
    w.finish()?;
    files.push("keys.csv".into());
    Ok(())
}

/// Writes pairwise overlaps and the heatmap of the first pair; returns the largest overlap.
fn write_overlap(m: &MtfLearner, out: &Path, files: &mut Vec<String>) -> Result<Option<f64>, HarnessError> {
    let bank = m.bank();
    if bank.len() < 2 {
        return Ok(None);
    }
    let entries = bank.entries();
    let mut w = CsvOut::create(&out.join("overlap.csv"), &["key_a", "key_b", "value"])?;
    let mut worst: f64 = 0.0;
    for i in 0..entries.len() {
        for j in (i + 1)..entries.len() {
            let o = bank.cross_overlap(&entries[i].key, &entries[j].key)?;
            worst = worst.max(o.value);
            w.row(&[entries[i].key.canonical(), entries[j].key.canonical(), num(o.value)])?;
        }
    }
    w.finish()?;
    let h = bank.cross_overlap(&entries[0].key, &entries[1].key)?.heatmap;
    let mut hw = CsvOut::create(&out.join("heatmap.csv"), &["row", "col", "value"])?;
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            hw.row(&[r.to_string(), c.to_string(), num(h[(r, c)])])?;
        }
    }
    hw.finish()?;
    files.push("overlap.csv".into());
    files.push("heatmap.csv".into());
    Ok(Some(worst))
}

/// Alternating-parity stream. The logged loss is the pre-update mean loss on a
/// fixed grid of the current sheet, which is what adaptation latency reads.
pub fn run_mobius(spec: &RunSpec, plan: &MobiusPlan, out: &Path) -> Result<(Vec<String>, Summary), HarnessError> {
    let mut learner = AnyLearner::build(spec)?;
    let stream = mobius_stream(&MobiusConfig {
        steps_per_phase: plan.steps_per_phase,
        n_phases: plan.n_phases,
        seed: spec.seed,
    })?;
    let probes = [mobius_probe(Parity::Plus, plan.probe_size), mobius_probe(Parity::Minus, plan.probe_size)];
    let probe_sets: Vec<Vec<Labeled>> = probes.iter().map(|p| p.iter().map(Sample::labeled).collect()).collect();

    let mut files = vec!["steps.csv".to_string()];
    let mut steps = CsvOut::create(&out.join("steps.csv"), &STEP_HEADER)?;
    let mut trace = Trace::default();
    for s in stream {
        let set = if s.phase > 0 { &probe_sets[0] } else { &probe_sets[1] };
        let probe_loss = learner.evaluate(set)?.mean_loss;
        let r = checked_step(&mut learner, &s, s.t)?;
        steps.row(&step_row(s.t, probe_loss, None, &r, s.phase))?;
        trace.push(TraceRow {
            step: s.t,
            loss: probe_loss,
            grad_norm: r.grad_norm,
            active_key: r.active_key,
            phase: s.phase,
        })?;
    }
    steps.finish()?;

    let flips: Vec<usize> = (1..plan.n_phases).map(|p| p * plan.steps_per_phase).collect();
    let mut latencies = Vec::with_capacity(flips.len());
    let mut lw = CsvOut::create(&out.join("latency.csv"), &["flip", "step", "phase", "latency"])?;
    for (i, &f) in flips.iter().enumerate() {
        let lat = match adaptation_latency(&trace, f, plan.epsilon) {
            Ok(t) => Some(t),
            Err(MetricsError::NotRecovered) => None,
            Err(e) => return Err(e.into()),
        };
        lw.row(&[(i + 1).to_string(), f.to_string(), Parity::of_phase(i + 1).sign().to_string(), opt(lat)])?;
        latencies.push(lat);
    }
    lw.finish()?;
    files.push("latency.csv".into());

    let warm: Vec<f64> = trace.rows().iter().take(SADDLE_WARMUP).map(|r| r.grad_norm).collect();
    let mut stagnant_windows = 0;
    if trace.len() > SADDLE_WINDOW {
        let windows = saddle_proxy(&trace, SADDLE_WINDOW, SaddleThresholds::from_warmup(&warm))?;
        let mut sw = CsvOut::create(&out.join("saddle.csv"), &["start", "mean_grad_norm", "decay_rate", "stagnant"])?;
        for w in &windows {
            stagnant_windows += usize::from(w.stagnant);
            sw.row(&[w.start.to_string(), num(w.mean_grad_norm), num(w.decay_rate), w.stagnant.to_string()])?;
        }
        sw.finish()?;
        files.push("saddle.csv".into());
    }

    let (overlap, n_keys) = match learner.as_mtf() {
        Some(m) => {
            write_keys(m, out, &mut files)?;
            (write_overlap(m, out, &mut files)?, m.bank().len())
        }
        None => (None, 0),
    };
    let final_loss = trace.rows().last().map_or(f64::NAN, |r| r.loss);
    Ok((files, Summary::Mobius { flips, latencies, final_loss, overlap, n_keys, stagnant_windows }))
}

/// Fixed held-out batch for Hessian checkpoints, drawn from an independent sample of the same world.
fn hessian_batch(plan: &BettiPlan, beta1: usize, seed: u64) -> Result<Vec<Sample>, HarnessError> {
    let n = plan.hessian_batch.max(100);
    let w = betti_world(&BettiConfig {
        beta1,
        n_samples: n,
        noise: plan.noise,
        seed: seed ^ 0x0068_656c_646f_7574,
        spacing: plan.spacing,
        disk_chart: plan.disk_chart,
    })?;
    Ok(w.samples.into_iter().take(plan.hessian_batch).collect())
}

/// One fresh learner per beta1, trained in shuffled epochs until the full-set loss
/// drops below epsilon or the epoch cap is reached.
pub fn run_betti(spec: &RunSpec, plan: &BettiPlan, out: &Path) -> Result<(Vec<String>, Summary), HarnessError> {
    let mut files = Vec::new();
    let mut conv = CsvOut::create(
        &out.join("convergence.csv"),
        &["beta1", "converged_epoch", "converged_step", "epochs_run", "final_loss", "mid_density"],
    )?;
    let mut hess = CsvOut::create(&out.join("hessian.csv"), &["beta1", "step", "epoch", "density"])?;
    let mut epochs = CsvOut::create(&out.join("epochs.csv"), &["beta1", "epoch", "loss"])?;
    let mut rows = Vec::new();

    for &beta1 in &plan.beta1 {
        let world = betti_world(&BettiConfig {
            beta1,
            n_samples: plan.per_component * beta1.max(1),
            noise: plan.noise,
            seed: spec.seed,
            spacing: plan.spacing,
            disk_chart: plan.disk_chart,
        })?;
        let n = world.samples.len();
        let full: Vec<Labeled> = world.samples.iter().map(Sample::labeled).collect();
        let mut learner = AnyLearner::build(spec)?;
        let track_hessian = spec.learner != LearnerKind::Mtf && learner.model().n_params() <= MAX_HESSIAN_PARAMS;
        let batch_samples = hessian_batch(plan, beta1, spec.seed)?;
        let batch: Vec<Labeled> = batch_samples.iter().map(Sample::labeled).collect();
        let hessian_until = plan.hessian_epochs * n;
        let mid_step = plan.hessian_mid_epoch * n;
        let mut mid_density = None;

        let name = format!("steps_b{beta1}.csv");
        let mut steps = CsvOut::create(&out.join(&name), &STEP_HEADER)?;
        files.push(name);
        let mut rng = Rng::with_stream(spec.seed, 7);
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0usize;
        let mut converged = None;
        let mut final_loss = f64::NAN;
        let mut epochs_run = 0;
        for epoch in 0..plan.max_epochs {
            rng.shuffle(&mut order);
            for &i in &order {
                if track_hessian && step <= hessian_until && step % plan.hessian_every == 0 {
                    let d = hessian_negative_density(learner.model(), &batch, plan.fd_step, plan.neg_tol)?;
                    hess.row(&[beta1.to_string(), step.to_string(), epoch.to_string(), num(d)])?;
                    if step <= mid_step {
                        mid_density = Some(d);
                    }
                }
                let s = &world.samples[i];
                let r = checked_step(&mut learner, s, step)?;
                steps.row(&step_row(step, r.loss, None, &r, s.phase))?;
                step += 1;
            }
            epochs_run = epoch + 1;
            final_loss = learner.evaluate(&full)?.mean_loss;
            epochs.row(&[beta1.to_string(), epochs_run.to_string(), num(final_loss)])?;
            if converged.is_none() && final_loss < plan.epsilon {
                converged = Some(epochs_run);
            }
            // Keep going past convergence until the Hessian schedule is complete.
            if converged.is_some() && (!track_hessian || step > hessian_until) {
                break;
            }
        }
        steps.finish()?;
        let row = BettiRow {
            beta1,
            converged_epoch: converged,
            converged_step: converged.map(|e| e * n),
            epochs_run,
            final_loss,
            mid_density,
        };
        conv.row(&[
            beta1.to_string(),
            opt(row.converged_epoch),
            opt(row.converged_step),
            epochs_run.to_string(),
            num(final_loss),
            opt(mid_density.map(num)),
        ])?;
        rows.push(row);
    }
    conv.finish()?;
    hess.finish()?;
    epochs.finish()?;
    files.extend(["convergence.csv".to_string(), "hessian.csv".into(), "epochs.csv".into()]);
    Ok((files, Summary::Betti { rows }))
}

/// Sequential permuted tasks. After each task every seen task's test set is scored.
/// Only the schedule tells EWC where a task ends; MTF and SGD never see it.
pub fn run_permuted(spec: &RunSpec, plan: &PermutedPlan, out: &Path) -> Result<(Vec<String>, Summary), HarnessError> {
    let tasks = permuted_stream(&PermutedConfig {
        n_tasks: plan.n_tasks,
        base_set: plan.base_set.clone(),
        seed: spec.seed,
        test_fraction: plan.test_fraction,
    })?;
    let mut learner = AnyLearner::build(spec)?;
    let mut steps = CsvOut::create(&out.join("steps.csv"), &STEP_HEADER)?;
    let mut acc_w = CsvOut::create(&out.join("accuracy.csv"), &["after_task", "task", "accuracy"])?;
    let mut avg_w = CsvOut::create(&out.join("average_accuracy.csv"), &["after_task", "average_accuracy"])?;
    let mut rng = Rng::with_stream(spec.seed, 11);
    let mut step = 0usize;
    let mut averages = Vec::new();
    let mut last_row = Vec::new();

    for (k, task) in tasks.iter().enumerate() {
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        for _ in 0..plan.epochs_per_task {
            rng.shuffle(&mut order);
            for &i in &order {
                let s = &task.train[i];
                let r = checked_step(&mut learner, s, step)?;
                let hit = match (r.prediction, s.y) {
                    (Prediction::Class(p), Target::Class(c)) => Some(f64::from(u8::from(p == c))),
                    _ => None,
                };
                steps.row(&step_row(step, r.loss, hit, &r, s.phase))?;
                step += 1;
            }
        }
        if k + 1 < tasks.len() {
            let recent: Vec<Labeled> = order.iter().map(|&i| task.train[i].labeled()).collect();
            learner.task_boundary(&recent)?;
        }
        last_row.clear();
        for (j, seen) in tasks[..=k].iter().enumerate() {
            let set: Vec<Labeled> = seen.test.iter().map(Sample::labeled).collect();
            let acc = learner
                .evaluate(&set)?
                .accuracy
                .ok_or_else(|| HarnessError::Data("digit targets must be classes".into()))?;
            acc_w.row(&[k.to_string(), j.to_string(), num(acc)])?;
            last_row.push(acc);
        }
        let avg = average_accuracy(&last_row)?;
        avg_w.row(&[k.to_string(), num(avg)])?;
        averages.push(avg);
    }
    steps.finish()?;
    acc_w.finish()?;
    avg_w.finish()?;
    let files = vec!["steps.csv".into(), "accuracy.csv".into(), "average_accuracy.csv".into()];
    Ok((files, Summary::Permuted { average_accuracy: averages, final_accuracy: last_row }))
}

/// One row of a two-run average-accuracy comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub after_task: usize,
    pub a: f64,
    pub b: f64,
    pub diff: f64,
}

/// Joins two permuted runs' `average_accuracy.csv` on `after_task`.
pub fn compare_accuracy(a: &Path, b: &Path) -> Result<Vec<Comparison>, HarnessError> {
    let read = |dir: &Path| -> Result<Vec<(usize, f64)>, HarnessError> {
        let t = read_csv(&dir.join("average_accuracy.csv"))?;
        let idx = t.require(&["after_task", "average_accuracy"])?;
        let tasks = t.numbers(idx[0])?;
        let accs = t.numbers(idx[1])?;
        tasks
            .into_iter()
            .zip(accs)
            .map(|(k, v)| match (k, v) {
                (Some(k), Some(v)) => Ok((k as usize, v)),
                _ => Err(HarnessError::Data(format!("{}: empty cell", t.path.display()))),
            })
            .collect()
    };
    let (ra, rb) = (read(a)?, read(b)?);
    Ok(ra
        .iter()
        .filter_map(|&(k, va)| rb.iter().find(|(kb, _)| *kb == k).map(|&(_, vb)| Comparison { after_task: k, a: va, b: vb, diff: va - vb }))
        .collect())
}
