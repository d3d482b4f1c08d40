use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtflab_core::harness::{emit_plots, run, selftest, Experiment, ExperimentConfig, HarnessError, Summary, SEED_ENV};
use mtflab_core::learners::LearnerKind;
use mtflab_core::memory::OrthoMode;
use mtflab_core::signature::KeyMode;

#[derive(Parser)]
#[command(name = "mtflab", version, about = "Subspace-routed continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV logs.
    Run(RunArgs),
    /// Render SVG plots for a run directory (or a directory of runs).
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long)]
    learner: Option<LearnerKind>,
    /// JSON config file; flags given here override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to the config file's seed, then $MTFLAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps_per_phase: Option<usize>,
    #[arg(long)]
    phases: Option<usize>,
    #[arg(long, value_parser = parse_ortho)]
    ortho: Option<OrthoMode>,
    #[arg(long)]
    ortho_penalty: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    k_interval: Option<usize>,
    /// Key composition: `spectrum` or `spectrum+support`.
    #[arg(long, value_parser = parse_key_mode)]
    key_mode: Option<KeyMode>,
    /// Directory with MNIST-style IDX files for the permuted experiment.
    #[arg(long)]
    mnist_idx: Option<PathBuf>,
}

fn parse_ortho(s: &str) -> Result<OrthoMode, String> {
    match s {
        "hard" => Ok(OrthoMode::Hard),
        "soft" => Ok(OrthoMode::Soft),
        other => Err(format!("expected hard or soft, got {other:?}")),
    }
}

fn parse_key_mode(s: &str) -> Result<KeyMode, String> {
    match s {
        "spectrum" => Ok(KeyMode::Spectrum),
        "spectrum+support" => Ok(KeyMode::SpectrumSupport),
        other => Err(format!("expected spectrum or spectrum+support, got {other:?}")),
    }
}

fn env_seed() -> Result<Option<u64>, HarnessError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn do_run(a: RunArgs) -> Result<(), HarnessError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    macro_rules! flag {
        ($field:ident, $v:expr) => {
            if let Some(v) = $v {
                cfg.$field = Some(v);
            }
        };
    }
    flag!(experiment, a.experiment);
    flag!(learner, a.learner);
    flag!(seed, a.seed);
    flag!(steps_per_phase, a.steps_per_phase);
    flag!(n_phases, a.phases);
    flag!(ortho, a.ortho);
    flag!(ortho_penalty, a.ortho_penalty);
    flag!(lr, a.lr);
    flag!(k_interval, a.k_interval);
    flag!(key_mode, a.key_mode);
    flag!(mnist_idx, a.mnist_idx);
    let spec = cfg.resolve(env_seed()?)?;
    let record = run(&spec, &a.out)?;
    println!("{} {} seed {} -> {}", spec.experiment.name(), spec.learner.name(), spec.seed, a.out.display());
    println!("config digest {}", record.digest);
    match &record.summary {
        Summary::Mobius { flips, latencies, overlap, .. } => {
            for (f, l) in flips.iter().zip(latencies) {
                let l = l.map_or_else(|| "not recovered".to_string(), |v| v.to_string());
                println!("flip at step {f}: latency {l}");
            }
            if let Some(o) = overlap {
                println!("subspace overlap {o:e}");
            }
        }
        Summary::Betti { rows } => {
            for r in rows {
                let c = r.converged_epoch.map_or_else(|| "not converged".to_string(), |v| format!("{v} epochs"));
                println!("beta1 {}: {c}", r.beta1);
            }
        }
        Summary::Permuted { average_accuracy, .. } => {
            if let Some(last) = average_accuracy.last() {
                println!("final average accuracy {last:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => do_run(a),
        Command::Plot { input } => emit_plots(&input).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::Selftest => {
            let checks = selftest();
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed == 0 {
                Ok(())
            } else {
                Err(HarnessError::Numeric(format!("{failed} self-checks failed")))
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
