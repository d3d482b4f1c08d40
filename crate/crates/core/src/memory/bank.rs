use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MemoryError;
use crate::numkernel::{newton_schulz_inv_sqrt, sym_eigen, LinalgError, Mat, Rng};
use crate::signature::SpectralKey;

/// How subspaces are assigned to keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthoMode {
    /// Disjoint coordinate blocks; orthogonality holds by construction.
    Hard,
    /// Every key spans all coordinates; warps are pushed apart by a penalty.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub max_keys: usize,
    pub ridge: f64,
    pub ema: f64,
    pub ns_max_iters: usize,
    pub ns_tol: f64,
    pub ortho: OrthoMode,
    pub ortho_penalty: f64,
    /// Gradient iterations per soft-mode refinement.
    pub soft_iters: usize,
    /// Step scale for soft-mode refinement (fraction of the stable step).
    pub soft_step: f64,
    /// Seed for the random initial frames of soft-mode warps.
    pub seed: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            max_keys: 2,
            ridge: 1e-4,
            ema: 0.1,
            ns_max_iters: 100,
            ns_tol: 1e-8,
            ortho: OrthoMode::Hard,
            ortho_penalty: 0.5,
            soft_iters: 50,
            soft_step: 0.5,
            seed: 0,
        }
    }
}

/// One memory slot: a coordinate block and the whitening warp acting inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub key: SpectralKey,
    /// 0-based feature coordinates owned by this entry, ascending and contiguous.
    pub block: Vec<usize>,
    /// `k_sub x k_sub` warp acting on `z[block]`.
    pub warp: Mat,
    /// Running second moment of `z[block]`.
    pub cov: Mat,
    pub hits: u64,
    /// False until the first refinement has replaced the identity prior.
    pub(crate) cov_seeded: bool,
}

impl MemoryEntry {
    pub fn k_sub(&self) -> usize {
        self.block.len()
    }

    /// `P W z`: the warped block in place, zeros elsewhere.
    pub fn condense(&self, z: &[f64]) -> Result<Vec<f64>, MemoryError> {
        let local = self.condense_block(z)?;
        let mut out = vec![0.0; z.len()];
        for (&i, v) in self.block.iter().zip(local) {
            out[i] = v;
        }
        Ok(out)
    }

    /// `W z[block]` as a `k_sub` vector.
    pub fn condense_block(&self, z: &[f64]) -> Result<Vec<f64>, MemoryError> {
        if let Some(&last) = self.block.last() {
            if last >= z.len() {
                return Err(MemoryError::DimMismatch { expected: last + 1, found: z.len() });
            }
        }
        let zb: Vec<f64> = self.block.iter().map(|&i| z[i]).collect();
        Ok(self.warp.mat_vec(&zb)?)
    }

    /// Maps a gradient on the condensed features back to the raw features:
    /// `Wᵀ g[block]` inside the block, zero outside.
    pub fn pull_back(&self, g_condensed: &[f64]) -> Vec<f64> {
        let gb: Vec<f64> = self.block.iter().map(|&i| g_condensed[i]).collect();
        let back = self.warp.transpose().mat_vec(&gb).expect("warp is k_sub square");
        let mut out = vec![0.0; g_condensed.len()];
        for (&i, v) in self.block.iter().zip(back) {
            out[i] = v;
        }
        out
    }

    /// The warp embedded as a `d_feat x d_feat` matrix supported on the block.
    pub fn embedded_warp(&self, d_feat: usize) -> Mat {
        let mut m = Mat::zeros(d_feat, d_feat);
        for (a, &i) in self.block.iter().enumerate() {
            for (b, &j) in self.block.iter().enumerate() {
                m[(i, j)] = self.warp[(a, b)];
            }
        }
        m
    }
}

/// Summary of one warp refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineReport {
    /// `‖W·cov·Wᵀ − I/k‖_F` after the update.
    pub residual: f64,
    /// True when Newton–Schulz hit its iteration cap and the eigendecomposition route was used.
    pub eigen_fallback: bool,
}

/// Cross-key overlap of two warps.
#[derive(Clone, Debug)]
pub struct Overlap {
    /// Absolute cosine between the vectorised embedded warps.
    pub value: f64,
    /// `|Ŵ_A Ŵ_Bᵀ|` in feature coordinates.
    pub heatmap: Mat,
}

/// Key-indexed store of subspace blocks and warps.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    cfg: MemoryConfig,
    d_feat: usize,
    k_sub: usize,
    entries: Vec<MemoryEntry>,
    index: HashMap<SpectralKey, usize>,
    cursor: usize,
    rng: Rng,
}

impl MemoryBank {
    pub fn new(d_feat: usize, cfg: MemoryConfig) -> Result<MemoryBank, MemoryError> {
        if cfg.max_keys == 0 || d_feat == 0 {
            return Err(MemoryError::InvalidConfig("d_feat and max_keys must be positive".into()));
        }
        if !(cfg.ema > 0.0 && cfg.ema <= 1.0) || !(cfg.ridge >= 0.0) || !(cfg.ortho_penalty >= 0.0) {
            return Err(MemoryError::InvalidConfig("ema must lie in (0, 1], ridge and penalty >= 0".into()));
        }
        let k_sub = match cfg.ortho {
            OrthoMode::Hard => d_feat / cfg.max_keys,
            OrthoMode::Soft => d_feat,
        };
        if k_sub == 0 {
            return Err(MemoryError::InvalidConfig(format!("d_feat {d_feat} too small for {} keys", cfg.max_keys)));
        }
        let rng = Rng::with_stream(cfg.seed, 0x6d656d);
        Ok(MemoryBank { cfg, d_feat, k_sub, entries: Vec::new(), index: HashMap::new(), cursor: 0, rng })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.cfg
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn k_sub(&self) -> usize {
        self.k_sub
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in allocation order.
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &MemoryEntry {
        &self.entries[idx]
    }

    pub fn position(&self, key: &SpectralKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn get(&self, key: &SpectralKey) -> Option<&MemoryEntry> {
        self.position(key).map(|i| &self.entries[i])
    }

    /// Index of the entry for `key`, allocating the next free block for a new key.
    pub fn retrieve_or_allocate(&mut self, key: &SpectralKey) -> Result<usize, MemoryError> {
        if let Some(&i) = self.index.get(key) {
            self.entries[i].hits += 1;
            return Ok(i);
        }
        if self.entries.len() >= self.cfg.max_keys {
            return Err(MemoryError::CapacityExhausted { key: key.canonical() });
        }
        let (block, warp) = match self.cfg.ortho {
            OrthoMode::Hard => {
                if self.cursor + self.k_sub > self.d_feat {
                    return Err(MemoryError::CapacityExhausted { key: key.canonical() });
                }
                let block: Vec<usize> = (self.cursor..self.cursor + self.k_sub).collect();
                self.cursor += self.k_sub;
                (block, Mat::identity(self.k_sub))
            }
            OrthoMode::Soft => ((0..self.d_feat).collect(), random_orthogonal(self.d_feat, &mut self.rng)),
        };
        let entry = MemoryEntry {
            key: key.clone(),
            block,
            warp,
            cov: Mat::identity(self.k_sub),
            hits: 1,
            cov_seeded: false,
        };
        self.entries.push(entry);
        self.index.insert(key.clone(), self.entries.len() - 1);
        Ok(self.entries.len() - 1)
    }

    /// Updates the running second moment of entry `idx` from full feature vectors and
    /// re-solves its warp.
    pub fn refine_warp(&mut self, idx: usize, z_batch: &[Vec<f64>]) -> Result<RefineReport, MemoryError> {
        if z_batch.is_empty() {
            return Err(MemoryError::EmptyBatch);
        }
        let moment = {
            let e = &self.entries[idx];
            block_second_moment(&e.block, z_batch)?
        };
        let ema = self.cfg.ema;
        let e = &mut self.entries[idx];
        e.cov = if e.cov_seeded {
            e.cov.scaled(1.0 - ema).add(&moment.scaled(ema))?
        } else {
            moment
        };
        e.cov_seeded = true;
        match self.cfg.ortho {
            OrthoMode::Hard => self.refine_hard(idx),
            OrthoMode::Soft => self.refine_soft(idx),
        }
    }

    fn refine_hard(&mut self, idx: usize) -> Result<RefineReport, MemoryError> {
        let e = &mut self.entries[idx];
        let k = e.k_sub() as f64;
        let mut reg = e.cov.clone();
        reg.add_diag(self.cfg.ridge);
        let (inv_sqrt, eigen_fallback) = match newton_schulz_inv_sqrt(&reg, self.cfg.ns_max_iters, self.cfg.ns_tol) {
            Ok(w) => (w, false),
            Err(LinalgError::MaxItersExceeded { .. }) => (eigen_inv_sqrt(&reg)?, true),
            Err(LinalgError::NotSpd) => return Err(MemoryError::NotSpd),
            Err(other) => return Err(other.into()),
        };
        e.warp = inv_sqrt.scaled(1.0 / k.sqrt());
        Ok(RefineReport { residual: whitening_gap(&e.warp, &e.cov)?, eigen_fallback })
    }

    /// Gradient descent on `‖W C Wᵀ − I/k‖² + μ Σ_B ‖W W_Bᵀ‖²` for the active warp.
    fn refine_soft(&mut self, idx: usize) -> Result<RefineReport, MemoryError> {
        let mu = self.cfg.ortho_penalty;
        let others: Vec<Mat> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .map(|(_, e)| e.warp.clone())
            .collect();
        let e = &mut self.entries[idx];
        let k = e.k_sub() as f64;
        let mut c = e.cov.clone();
        c.add_diag(self.cfg.ridge);
        let target = Mat::identity(e.k_sub()).scaled(1.0 / k);
        // Both terms are quadratic in W; bound their curvature to pick a stable step.
        let others_sq: f64 = others.iter().map(|w| w.frobenius_norm().powi(2)).sum();
        let curvature = 8.0 * c.trace() * whitening_scale(&e.warp, &c) + 2.0 * mu * others_sq;
        let step = self.cfg.soft_step / curvature.max(f64::MIN_POSITIVE);
        let gram: Option<Mat> = others
            .iter()
            .map(|w| w.transpose().matmul(w))
            .try_fold(Mat::zeros(e.k_sub(), e.k_sub()), |acc, g| g.and_then(|g| acc.add(&g)))
            .ok();
        for _ in 0..self.cfg.soft_iters {
            let wc = e.warp.matmul(&c)?;
            let r = wc.matmul(&e.warp.transpose())?.sub(&target)?;
            let mut grad = r.matmul(&wc)?.scaled(4.0);
            if let Some(g) = &gram {
                grad = grad.add(&e.warp.matmul(g)?.scaled(2.0 * mu))?;
            }
            e.warp = e.warp.sub(&grad.scaled(step))?;
            if !e.warp.is_finite() {
                return Err(MemoryError::Linalg(LinalgError::NotFinite));
            }
        }
        Ok(RefineReport { residual: whitening_gap(&e.warp, &e.cov)?, eigen_fallback: false })
    }

    /// Absolute cosine between the embedded warps of two keys and their product heatmap.
    pub fn cross_overlap(&self, a: &SpectralKey, b: &SpectralKey) -> Result<Overlap, MemoryError> {
        let ea = self.get(a).ok_or_else(|| MemoryError::UnknownKey(a.canonical()))?;
        let eb = self.get(b).ok_or_else(|| MemoryError::UnknownKey(b.canonical()))?;
        let wa = ea.embedded_warp(self.d_feat);
        let wb = eb.embedded_warp(self.d_feat);
        let inner: f64 = wa.as_slice().iter().zip(wb.as_slice()).map(|(x, y)| x * y).sum();
        let denom = wa.frobenius_norm() * wb.frobenius_norm();
        let value = if denom > 0.0 { (inner / denom).abs() } else { 0.0 };
        let prod = wa.matmul(&wb.transpose())?;
        let heatmap = Mat::from_vec(self.d_feat, self.d_feat, prod.as_slice().iter().map(|v| v.abs()).collect())?;
        Ok(Overlap { value, heatmap })
    }

    pub(crate) fn from_parts(
        cfg: MemoryConfig,
        d_feat: usize,
        k_sub: usize,
        cursor: usize,
        entries: Vec<MemoryEntry>,
    ) -> MemoryBank {
        let index = entries.iter().enumerate().map(|(i, e)| (e.key.clone(), i)).collect();
        let rng = Rng::with_stream(cfg.seed, 0x6d656d);
        MemoryBank { cfg, d_feat, k_sub, entries, index, cursor, rng }
    }

    pub(crate) fn cursor(&self) -> usize {
        self.cursor
    }
}

/// `E[z_b z_bᵀ]` over the batch, restricted to `block`.
fn block_second_moment(block: &[usize], z_batch: &[Vec<f64>]) -> Result<Mat, MemoryError> {
    let k = block.len();
    let mut m = Mat::zeros(k, k);
    for z in z_batch {
        if block.last().is_some_and(|&l| l >= z.len()) {
            return Err(MemoryError::DimMismatch { expected: block[k - 1] + 1, found: z.len() });
        }
        for a in 0..k {
            let za = z[block[a]];
            for b in a..k {
                m[(a, b)] += za * z[block[b]];
            }
        }
    }
    let n = z_batch.len() as f64;
    for a in 0..k {
        for b in a..k {
            let v = m[(a, b)] / n;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok(m)
}

/// `‖W·C·Wᵀ − I/k‖_F`.
pub fn whitening_gap(w: &Mat, c: &Mat) -> Result<f64, MemoryError> {
    let k = w.rows() as f64;
    let prod = w.matmul(c)?.matmul(&w.transpose())?;
    Ok(prod.sub(&Mat::identity(w.rows()).scaled(1.0 / k))?.frobenius_norm())
}

/// Rough size of `‖W C Wᵀ‖`, floored so the step bound stays finite for tiny warps.
fn whitening_scale(w: &Mat, c: &Mat) -> f64 {
    let k = w.rows() as f64;
    let wcw = w.matmul(c).and_then(|m| m.matmul(&w.transpose()));
    wcw.map(|m| m.trace() / c.trace().max(f64::MIN_POSITIVE)).unwrap_or(1.0).max(1.0 / k)
}

/// `V·diag(λ^{-1/2})·Vᵀ` for an SPD matrix.
pub fn eigen_inv_sqrt(a: &Mat) -> Result<Mat, MemoryError> {
    let e = sym_eigen(a)?;
    if e.values.first().is_some_and(|&v| v <= 0.0) {
        return Err(MemoryError::NotSpd);
    }
    let n = a.rows();
    let mut out = Mat::zeros(n, n);
    for (k, &lam) in e.values.iter().enumerate() {
        let s = 1.0 / lam.sqrt();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += s * e.vectors[(i, k)] * e.vectors[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Haar-like random orthogonal matrix via Gram–Schmidt on Gaussian columns.
fn random_orthogonal(n: usize, rng: &mut Rng) -> Mat {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v = rng.normal_vec(n, 1.0);
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut m = Mat::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            m[(i, j)] = c[i];
        }
    }
    m
}
