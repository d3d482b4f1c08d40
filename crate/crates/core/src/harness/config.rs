use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::envs::{BaseSet, DiskChart};
use crate::learners::{EwcConfig, LearnerKind, ModelSpec, MtfConfig, Shield};
use crate::memory::{MemoryConfig, OrthoMode};
use crate::signature::{KeyMode, SignatureConfig};

pub const SEED_ENV: &str = "MTFLAB_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Mobius,
    Betti,
    Permuted,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Mobius => "mobius",
            Experiment::Betti => "betti",
            Experiment::Permuted => "permuted",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mobius" => Ok(Experiment::Mobius),
            "betti" => Ok(Experiment::Betti),
            "permuted" => Ok(Experiment::Permuted),
            other => Err(format!("unknown experiment {other:?}")),
        }
    }
}

/// User-facing run configuration. Every field is optional; absent fields take the
/// experiment's defaults when the config is resolved.
///
/// The nested `model`, `mtf`, `ewc` and `plan` objects are merged field by field
/// over those defaults, so `{"mtf": {"memory": {"ridge": 1e-3}}}` changes only the
/// ridge. The flat fields (`lr`, `k_interval`, `ortho`, ...) are applied last.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub learner: Option<LearnerKind>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub steps_per_phase: Option<usize>,
    pub n_phases: Option<usize>,
    pub beta1: Option<Vec<usize>>,
    pub n_tasks: Option<usize>,
    pub k_interval: Option<usize>,
    pub ortho: Option<OrthoMode>,
    pub ortho_penalty: Option<f64>,
    pub epsilon: Option<f64>,
    pub key_mode: Option<KeyMode>,
    /// Directory holding MNIST-style IDX files to use instead of the bundled digits.
    pub mnist_idx: Option<PathBuf>,
    pub model: Option<Value>,
    pub mtf: Option<Value>,
    pub ewc: Option<Value>,
    pub plan: Option<Value>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Fills defaults. The seed falls back to `env_seed` (normally `MTFLAB_SEED`), then 0.
    pub fn resolve(&self, env_seed: Option<u64>) -> Result<RunSpec, HarnessError> {
        let experiment = self
            .experiment
            .ok_or_else(|| HarnessError::Config("experiment is required".into()))?;
        let learner = self.learner.unwrap_or(LearnerKind::Mtf);
        let seed = self.seed.or(env_seed).unwrap_or(0);

        let mut model: ModelSpec = overlay(default_model(experiment), self.model.as_ref(), "model")?;
        let mut mtf: MtfConfig = overlay(default_mtf(experiment), self.mtf.as_ref(), "mtf")?;
        let ewc: EwcConfig = overlay(EwcConfig::default(), self.ewc.as_ref(), "ewc")?;
        let mut plan = match experiment {
            Experiment::Mobius => Plan::Mobius(overlay(MobiusPlan::default(), self.plan.as_ref(), "plan")?),
            Experiment::Betti => Plan::Betti(overlay(BettiPlan::default(), self.plan.as_ref(), "plan")?),
            Experiment::Permuted => Plan::Permuted(overlay(PermutedPlan::default(), self.plan.as_ref(), "plan")?),
        };

        if let Some(k) = self.k_interval {
            mtf.k_interval = k;
        }
        if let Some(o) = self.ortho {
            mtf.memory.ortho = o;
        }
        if let Some(p) = self.ortho_penalty {
            mtf.memory.ortho_penalty = p;
        }
        if let Some(m) = self.key_mode {
            mtf.signature.key_mode = m;
        }
        mtf.memory.seed = seed;
        match &mut plan {
            Plan::Mobius(p) => {
                set(&mut p.steps_per_phase, self.steps_per_phase);
                set(&mut p.n_phases, self.n_phases);
                set(&mut p.epsilon, self.epsilon);
            }
            Plan::Betti(p) => {
                set(&mut p.beta1, self.beta1.clone());
                set(&mut p.epsilon, self.epsilon);
            }
            Plan::Permuted(p) => {
                set(&mut p.n_tasks, self.n_tasks);
                if let Some(dir) = &self.mnist_idx {
                    p.base_set = BaseSet::MnistIdx { dir: dir.clone(), limit: p.mnist_limit };
                }
                if let BaseSet::MnistIdx { .. } = p.base_set {
                    // IDX images are 28x28.
                    if self.model.is_none() {
                        model = ModelSpec::digits(784);
                    }
                }
            }
        }
        let spec = RunSpec { experiment, learner, seed, lr: self.lr.unwrap_or(0.01), model, mtf, ewc, plan };
        spec.validate()?;
        Ok(spec)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Serialises `base`, merges `patch` into it and deserialises the result.
fn overlay<T: Serialize + DeserializeOwned>(base: T, patch: Option<&Value>, what: &str) -> Result<T, HarnessError> {
    let Some(patch) = patch else {
        return Ok(base);
    };
    let mut v = serde_json::to_value(&base).map_err(|e| HarnessError::Config(format!("{what}: {e}")))?;
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| HarnessError::Config(format!("{what}: {e}")))
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        // A tagged enum switching variant is replaced, not merged.
        (Value::Object(b), Value::Object(p)) if p.contains_key("kind") && b.get("kind") != p.get("kind") => {
            *b = p.clone();
        }
        (Value::Object(b), Value::Object(p)) => {
            for (k, pv) in p {
                match b.get_mut(k) {
                    Some(bv) => merge(bv, pv),
                    None => {
                        b.insert(k.clone(), pv.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

pub fn default_model(experiment: Experiment) -> ModelSpec {
    match experiment {
        Experiment::Mobius => ModelSpec::mobius(),
        Experiment::Betti => ModelSpec::betti_probe(),
        Experiment::Permuted => ModelSpec::digits(64),
    }
}

/// Per-experiment MTF presets. They differ in key budget, fiber admission and shield.
pub fn default_mtf(experiment: Experiment) -> MtfConfig {
    let base = MtfConfig::default();
    match experiment {
        Experiment::Mobius => MtfConfig {
            signature: SignatureConfig { spawn_confirm: 1, link_radius: None, ..Default::default() },
            memory: MemoryConfig { max_keys: 2, ..Default::default() },
            shield: Shield::Jacobian { anchors: 16 },
            ..base
        },
        Experiment::Betti => MtfConfig {
            signature: SignatureConfig { spawn_confirm: 1, link_radius: Some(2.5), ..Default::default() },
            memory: MemoryConfig { max_keys: 4, ..Default::default() },
            shield: Shield::Jacobian { anchors: 1 },
            ..base
        },
        Experiment::Permuted => MtfConfig {
            signature: SignatureConfig { spawn_frac: 0.03, spawn_confirm: 3, ..Default::default() },
            memory: MemoryConfig { max_keys: 5, ..Default::default() },
            shield: Shield::Input { anchors: 64, energy: 0.99 },
            ..base
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobiusPlan {
    pub steps_per_phase: usize,
    pub n_phases: usize,
    /// Points per parity on the evaluation grid that defines the logged loss.
    pub probe_size: usize,
    pub epsilon: f64,
}

impl Default for MobiusPlan {
    fn default() -> Self {
        MobiusPlan { steps_per_phase: 500, n_phases: 4, probe_size: 64, epsilon: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BettiPlan {
    pub beta1: Vec<usize>,
    /// Points per loop (or for the disk), so density is the same for every beta1.
    pub per_component: usize,
    pub noise: f64,
    pub spacing: f64,
    pub disk_chart: DiskChart,
    /// Full-set loss threshold for convergence.
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Steps between Hessian checkpoints.
    pub hessian_every: usize,
    /// Checkpoints are taken during the first `hessian_epochs` epochs only.
    pub hessian_epochs: usize,
    /// The mid-training density is the last checkpoint at or before this epoch's end.
    pub hessian_mid_epoch: usize,
    pub hessian_batch: usize,
    pub fd_step: f64,
    pub neg_tol: f64,
}

impl Default for BettiPlan {
    fn default() -> Self {
        BettiPlan {
            beta1: vec![0, 1, 2, 4],
            per_component: 128,
            noise: 0.01,
            spacing: 5.0,
            disk_chart: DiskChart::Linear,
            epsilon: 1e-2,
            max_epochs: 300,
            hessian_every: 100,
            hessian_epochs: 10,
            hessian_mid_epoch: 5,
            hessian_batch: 64,
            fd_step: crate::metrics::DEFAULT_FD_STEP,
            neg_tol: crate::metrics::DEFAULT_NEG_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutedPlan {
    pub n_tasks: usize,
    pub epochs_per_task: usize,
    pub test_fraction: f64,
    pub base_set: BaseSet,
    /// Image cap applied when `mnist_idx` is given.
    pub mnist_limit: usize,
}

impl Default for PermutedPlan {
    fn default() -> Self {
        PermutedPlan { n_tasks: 5, epochs_per_task: 1, test_fraction: 0.2, base_set: BaseSet::Bundled, mnist_limit: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "experiment")]
pub enum Plan {
    Mobius(MobiusPlan),
    Betti(BettiPlan),
    Permuted(PermutedPlan),
}

/// Fully resolved run description. Its canonical JSON is what gets hashed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub experiment: Experiment,
    pub learner: LearnerKind,
    pub seed: u64,
    pub lr: f64,
    pub model: ModelSpec,
    pub mtf: MtfConfig,
    pub ewc: EwcConfig,
    pub plan: Plan,
}

impl RunSpec {
    /// Defaults for `experiment` and `learner` with the given seed.
    pub fn preset(experiment: Experiment, learner: LearnerKind, seed: u64) -> RunSpec {
        ExperimentConfig { experiment: Some(experiment), learner: Some(learner), seed: Some(seed), ..Default::default() }
            .resolve(None)
            .expect("presets are valid")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.mtf.k_interval == 0 {
            return bad("k_interval must be at least 1".into());
        }
        if !(self.mtf.memory.ortho_penalty >= 0.0) {
            return bad("ortho_penalty must be nonnegative".into());
        }
        self.mtf.signature.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        match &self.plan {
            Plan::Mobius(p) => {
                if p.steps_per_phase == 0 || p.n_phases == 0 || p.probe_size == 0 {
                    return bad("steps_per_phase, n_phases and probe_size must be positive".into());
                }
                if !(p.epsilon > 0.0) {
                    return bad("epsilon must be positive".into());
                }
            }
            Plan::Betti(p) => {
                if p.beta1.is_empty() {
                    return bad("beta1 list is empty".into());
                }
                if p.per_component == 0 || p.max_epochs == 0 || p.hessian_every == 0 || p.hessian_batch == 0 {
                    return bad("betti sizes must be positive".into());
                }
                if !(p.epsilon > 0.0) {
                    return bad("epsilon must be positive".into());
                }
            }
            Plan::Permuted(p) => {
                if p.n_tasks == 0 || p.epochs_per_task == 0 {
                    return bad("n_tasks and epochs_per_task must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("run spec serialises")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_is_required() {
        assert!(matches!(ExperimentConfig::default().resolve(None), Err(HarnessError::Config(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"experiment":"mobius","bogus":1}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"mobius","mtf":{"memory":{"bogus":1}}}"#).unwrap();
        assert!(matches!(cfg.resolve(None), Err(HarnessError::Config(_))));
    }

    #[test]
    fn nested_overrides_merge() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment":"mobius","mtf":{"memory":{"ridge":0.001}},"k_interval":7,"ortho":"soft"}"#,
        )
        .unwrap();
        let spec = cfg.resolve(None).unwrap();
        assert_eq!(spec.mtf.memory.ridge, 1e-3);
        assert_eq!(spec.mtf.memory.max_keys, 2);
        assert_eq!(spec.mtf.k_interval, 7);
        assert_eq!(spec.mtf.memory.ortho, OrthoMode::Soft);
    }

    #[test]
    fn tagged_variant_switch_replaces() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"mobius","mtf":{"shield":{"kind":"none"}}}"#).unwrap();
        assert_eq!(cfg.resolve(None).unwrap().mtf.shield, Shield::None);
    }

    #[test]
    fn seed_precedence() {
        let mut cfg = ExperimentConfig { experiment: Some(Experiment::Mobius), ..Default::default() };
        assert_eq!(cfg.resolve(None).unwrap().seed, 0);
        assert_eq!(cfg.resolve(Some(9)).unwrap().seed, 9);
        cfg.seed = Some(3);
        assert_eq!(cfg.resolve(Some(9)).unwrap().seed, 3);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunSpec::preset(Experiment::Mobius, LearnerKind::Sgd, 0);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        b.lr = 0.02;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let a = RunSpec::preset(Experiment::Betti, LearnerKind::Mtf, 4);
        let back: RunSpec = serde_json::from_str(&a.canonical_json()).unwrap();
        assert_eq!(a, back);
    }
}
