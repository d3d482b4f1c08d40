use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::model::l2;
use super::{summarize, EvalReport, LearnError, Learner, LearnerKind, Model, StepReport};
use crate::backbone::Prediction;
use crate::envs::Labeled;
use crate::memory::{MemoryBank, MemoryConfig, OrthoMode};
use crate::numkernel::{orthonormal_basis, project_out, sym_eigen, Mat};
use crate::signature::{BufferSource, Routing, SignatureConfig, TopoCondenser};

/// Protection of the shared (non-final) backbone layers against updates made
/// under a different key.
///
/// Routing alone only isolates the final feature layer; earlier layers feed every
/// block, so without a shield their updates move other keys' features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Shield {
    None,
    /// Project shared-layer gradients off the span of other keys' block-feature
    /// Jacobians, taken at `anchors` recent inputs when each key was last left.
    Jacobian { anchors: usize },
    /// Project first-layer gradients off the input subspace other keys occupied,
    /// keeping directions up to the given energy fraction.
    Input { anchors: usize, energy: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtfConfig {
    pub signature: SignatureConfig,
    pub memory: MemoryConfig,
    /// Steps of a key between warp refinements.
    pub k_interval: usize,
    /// Recent inputs of a key whose features feed a refinement.
    pub refine_batch: usize,
    pub shield: Shield,
    /// Re-express the readout's block columns after each refinement so the
    /// key's predictions are unchanged by the new warp.
    pub carry_readout: bool,
}

impl Default for MtfConfig {
    fn default() -> Self {
        MtfConfig {
            signature: SignatureConfig::default(),
            memory: MemoryConfig::default(),
            k_interval: 25,
            refine_batch: 64,
            shield: Shield::Jacobian { anchors: 16 },
            carry_readout: true,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct KeyState {
    recent: VecDeque<Vec<f64>>,
    /// Orthonormal rows to protect while another key is active.
    protect: Vec<Vec<f64>>,
    steps: u64,
}

/// Subspace-routed learner: condenser keys select a memory block, updates are
/// confined to it, and each block's warp is periodically re-whitened.
#[derive(Clone, Debug)]
pub struct MtfLearner {
    pub model: Model,
    pub lr: f64,
    cfg: MtfConfig,
    condenser: TopoCondenser,
    bank: MemoryBank,
    keys: Vec<KeyState>,
    active: Option<usize>,
    /// Union of other keys' protected rows for the active key.
    shield_basis: Vec<Vec<f64>>,
    pub steps: u64,
    /// Residual of the latest warp refinement.
    pub last_refine_residual: Option<f64>,
}

impl MtfLearner {
    pub fn new(model: Model, lr: f64, cfg: MtfConfig) -> Result<MtfLearner, LearnError> {
        if cfg.k_interval == 0 || cfg.refine_batch == 0 {
            return Err(LearnError::InvalidConfig("k_interval and refine_batch must be positive".into()));
        }
        let condenser = TopoCondenser::new(cfg.signature.clone())?;
        let bank = MemoryBank::new(model.backbone.d_feat(), cfg.memory.clone())?;
        Ok(MtfLearner {
            model,
            lr,
            cfg,
            condenser,
            bank,
            keys: Vec::new(),
            active: None,
            shield_basis: Vec::new(),
            steps: 0,
            last_refine_residual: None,
        })
    }

    pub fn config(&self) -> &MtfConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn condenser(&self) -> &TopoCondenser {
        &self.condenser
    }

    /// Condensed features of `x` under the stored entry `idx`.
    pub fn condensed(&self, idx: usize, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        let z = self.model.backbone.features(x)?;
        Ok(self.bank.entry(idx).condense(&z)?)
    }

    fn signature_input(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        Ok(match self.cfg.signature.source {
            BufferSource::Observations => x.to_vec(),
            BufferSource::Features => self.model.backbone.features(x)?,
        })
    }

    /// Number of shared parameters: everything before the final backbone layer.
    fn n_shared(&self) -> usize {
        let bb = &self.model.backbone;
        bb.layer_range(bb.n_layers() - 1).start
    }

    fn routed(&self) -> bool {
        self.cfg.memory.ortho == OrthoMode::Hard
    }

    /// Rows spanning the first-order response of key `idx`'s condensed block to
    /// shared-parameter changes, at its recent inputs.
    fn protection_rows(&self, idx: usize) -> Result<Vec<Vec<f64>>, LearnError> {
        let st = &self.keys[idx];
        let entry = self.bank.entry(idx);
        match self.cfg.shield {
            Shield::None => Ok(Vec::new()),
            Shield::Jacobian { anchors } => {
                let n_shared = self.n_shared();
                let d_feat = self.model.backbone.d_feat();
                let mut rows = Vec::new();
                for x in st.recent.iter().rev().take(anchors) {
                    let (_, tape) = self.model.backbone.forward(x)?;
                    for a in 0..entry.k_sub() {
                        // Row `a` of the warped block, pulled back to raw features.
                        let mut g = vec![0.0; d_feat];
                        g[entry.block[a]] = 1.0;
                        let g_z = entry.pull_back(&g);
                        let grad = self.model.backbone.backward_from_feature_grad(&tape, &g_z)?;
                        rows.push(grad[..n_shared].to_vec());
                    }
                }
                Ok(orthonormal_basis(&rows, 1e-9))
            }
            Shield::Input { anchors, energy } => {
                let d = self.model.backbone.d_in() + 1;
                let mut gram = Mat::zeros(d, d);
                let mut n = 0usize;
                for x in st.recent.iter().rev().take(anchors) {
                    let mut xa = x.clone();
                    xa.push(1.0);
                    for i in 0..d {
                        for j in 0..d {
                            gram[(i, j)] += xa[i] * xa[j];
                        }
                    }
                    n += 1;
                }
                if n == 0 {
                    return Ok(Vec::new());
                }
                let eig = sym_eigen(&gram).map_err(crate::memory::MemoryError::from)?;
                let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
                let mut rows = Vec::new();
                let mut kept = 0.0;
                for k in (0..d).rev() {
                    if total <= 0.0 || kept >= energy * total {
                        break;
                    }
                    kept += eig.values[k].max(0.0);
                    rows.push(eig.vectors.col(k));
                }
                Ok(orthonormal_basis(&rows, 1e-9))
            }
        }
    }

    fn switch_to(&mut self, idx: usize) -> Result<(), LearnError> {
        if self.active == Some(idx) {
            return Ok(());
        }
        if let Some(prev) = self.active {
            if self.routed() {
                self.keys[prev].protect = self.protection_rows(prev)?;
            }
        }
        self.active = Some(idx);
        let others: Vec<Vec<f64>> = self
            .keys
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .flat_map(|(_, k)| k.protect.iter().cloned())
            .collect();
        self.shield_basis = orthonormal_basis(&others, 1e-9);
        Ok(())
    }

    fn apply_shield(&self, bb_grad: &mut [f64]) {
        if self.shield_basis.is_empty() {
            return;
        }
        match self.cfg.shield {
            Shield::None => {}
            Shield::Jacobian { .. } => {
                let n_shared = self.n_shared();
                project_out(&mut bb_grad[..n_shared], &self.shield_basis);
            }
            Shield::Input { .. } => {
                let bb = &self.model.backbone;
                let (d_in, d_h) = (bb.dims()[0], bb.dims()[1]);
                let r = bb.layer_range(0);
                let layer = &mut bb_grad[r];
                // Each hidden unit's weight row and bias form an augmented input vector.
                let mut row = vec![0.0; d_in + 1];
                for i in 0..d_h {
                    row[..d_in].copy_from_slice(&layer[i * d_in..(i + 1) * d_in]);
                    row[d_in] = layer[d_h * d_in + i];
                    project_out(&mut row, &self.shield_basis);
                    layer[i * d_in..(i + 1) * d_in].copy_from_slice(&row[..d_in]);
                    layer[d_h * d_in + i] = row[d_in];
                }
            }
        }
    }

    fn warmup_step(&mut self, s: &Labeled<'_>) -> Result<StepReport, LearnError> {
        let (loss, prediction, grad) = self.model.loss_and_grad(s)?;
        let grad_norm = if self.bank.is_empty() {
            self.model.apply_flat(&grad, self.lr)?;
            l2(&grad)
        } else {
            0.0
        };
        Ok(StepReport { loss, prediction, grad_norm, active_key: None, warmup: true })
    }

    fn routed_step(&mut self, idx: usize, s: &Labeled<'_>) -> Result<StepReport, LearnError> {
        self.switch_to(idx)?;
        let cap = self.cfg.refine_batch;
        let st = &mut self.keys[idx];
        st.recent.push_back(s.x.to_vec());
        if st.recent.len() > cap {
            st.recent.pop_front();
        }
        st.steps += 1;

        let entry = self.bank.entry(idx);
        let (z, tape) = self.model.backbone.forward(s.x)?;
        let zc = entry.condense(&z)?;
        let out = self.model.readout.forward(&zc)?;
        let (loss, g_out) = self.model.loss.loss_and_grad(&out, s.y)?;
        let prediction = self.model.loss.predict(&out);
        let (mut g_ro, g_zc) = self.model.readout.backward(&zc, &g_out)?;
        let g_z = entry.pull_back(&g_zc);
        let mut g_bb = self.model.backbone.backward_from_feature_grad(&tape, &g_z)?;

        // Readout: only the active block's columns move; the shared bias stays put.
        let ro = &self.model.readout;
        let in_block: Vec<bool> = {
            let mut m = vec![false; ro.d_in()];
            entry.block.iter().for_each(|&i| m[i] = true);
            m
        };
        for o in 0..ro.d_out() {
            for (i, &keep) in in_block.iter().enumerate() {
                if !keep {
                    g_ro[ro.weight_index(o, i)] = 0.0;
                }
            }
            g_ro[ro.bias_index(o)] = 0.0;
        }
        self.apply_shield(&mut g_bb);

        let grad_norm = (l2(&g_bb).powi(2) + l2(&g_ro).powi(2)).sqrt();
        self.model.backbone.apply_update(&g_bb, self.lr)?;
        crate::backbone::apply_update(self.model.readout.params_mut(), &g_ro, self.lr)?;

        let key = self.bank.entry(idx).key.canonical();
        if self.keys[idx].steps % self.cfg.k_interval as u64 == 0 {
            let batch: Vec<Vec<f64>> = self.keys[idx]
                .recent
                .iter()
                .map(|x| self.model.backbone.features(x))
                .collect::<Result<_, _>>()?;
            let old = self.bank.entry(idx).warp.clone();
            let rep = self.bank.refine_warp(idx, &batch)?;
            // Soft-mode keys share every readout column, so a per-key carry would
            // move the other keys' outputs.
            if self.cfg.carry_readout && self.routed() {
                self.carry_readout(idx, &old)?;
            }
            self.last_refine_residual = Some(rep.residual);
        }
        Ok(StepReport { loss, prediction, grad_norm, active_key: Some(key), warmup: false })
    }

    /// Re-expresses the readout's block columns for the new warp:
    /// `R ← R · W_old · C · W_newᵀ · (W_new · C · W_newᵀ + δI)⁻¹`, the least-squares
    /// map reproducing the old outputs under the key's second moment `C`. For an
    /// invertible warp and δ → 0 this is `R · W_old · W_new⁻¹`.
    fn carry_readout(&mut self, idx: usize, old: &Mat) -> Result<(), LearnError> {
        use crate::memory::MemoryError;
        let entry = self.bank.entry(idx);
        let mut c = entry.cov.clone();
        c.add_diag(self.cfg.memory.ridge);
        let wc = entry.warp.matmul(&c).map_err(MemoryError::from)?;
        let mut gram = wc.matmul(&entry.warp.transpose()).map_err(MemoryError::from)?;
        gram.add_diag(1e-10 * gram.trace().max(f64::MIN_POSITIVE));
        let cross = old.matmul(&wc.transpose()).map_err(MemoryError::from)?;
        let m = cross.matmul(&gram.inverse().map_err(MemoryError::from)?).map_err(MemoryError::from)?;
        let block = entry.block.clone();
        let k = block.len();
        let ro = &mut self.model.readout;
        for o in 0..ro.d_out() {
            let r: Vec<f64> = block.iter().map(|&i| ro.params()[ro.weight_index(o, i)]).collect();
            for (j, &col) in block.iter().enumerate() {
                let v: f64 = (0..k).map(|a| r[a] * m[(a, j)]).sum();
                let wi = ro.weight_index(o, col);
                ro.params_mut()[wi] = v;
            }
        }
        Ok(())
    }

    /// Scores one sample through the stored entry its key maps to, or the
    /// un-condensed path on a miss.
    fn score(&self, s: &Labeled<'_>) -> Result<(f64, Prediction, bool), LearnError> {
        let sig = self.signature_input(s.x)?;
        let entry = self.condenser.route(&sig).and_then(|k| self.bank.get(k));
        match entry {
            Some(e) => {
                let z = self.model.backbone.features(s.x)?;
                let out = self.model.readout.forward(&e.condense(&z)?)?;
                let (loss, _) = self.model.loss.loss_and_grad(&out, s.y)?;
                Ok((loss, self.model.loss.predict(&out), false))
            }
            None => {
                let (loss, pred) = self.model.score(s)?;
                Ok((loss, pred, true))
            }
        }
    }
}

impl Learner for MtfLearner {
    fn kind(&self) -> LearnerKind {
        LearnerKind::Mtf
    }

    fn model(&self) -> &Model {
        &self.model
    }

    fn step(&mut self, s: Labeled<'_>) -> Result<StepReport, LearnError> {
        let sig = self.signature_input(s.x)?;
        let routing = self.condenser.observe(&sig)?;
        let report = match routing {
            Routing::Warming { .. } => self.warmup_step(&s)?,
            Routing::Keyed { key, .. } => {
                let idx = self.bank.retrieve_or_allocate(&key)?;
                while self.keys.len() < self.bank.len() {
                    self.keys.push(KeyState::default());
                }
                self.routed_step(idx, &s)?
            }
        };
        self.steps += 1;
        Ok(report)
    }

    fn evaluate(&self, set: &[Labeled<'_>]) -> Result<EvalReport, LearnError> {
        summarize(set, |s| self.score(s))
    }
}
