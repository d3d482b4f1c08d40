use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{
    build_knn_graph, coordinate_energy, median_pairwise_distance, normalized_laplacian, quantize_key,
    spectral_signature, support_of, KeyMode, SignatureError, SpectralKey,
};

/// FIFO window of recent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBuffer {
    capacity: usize,
    items: VecDeque<Vec<f64>>,
}

impl ObservationBuffer {
    pub fn new(capacity: usize) -> Self {
        ObservationBuffer { capacity, items: VecDeque::with_capacity(capacity) }
    }

    /// Appends `x`, evicting the oldest entry when full.
    pub fn push(&mut self, x: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(x);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.items.iter()
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.items.iter().cloned().collect()
    }
}

/// What the condenser's window holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferSource {
    Observations,
    Features,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignatureConfig {
    pub capacity: usize,
    pub k_nn: usize,
    /// Number of nonzero eigenvalues kept in the key.
    pub k_eigs: usize,
    pub zero_tol: f64,
    pub grid: f64,
    pub energy_tol: f64,
    pub key_mode: KeyMode,
    pub source: BufferSource,
    /// Largest energy fraction outside a fiber's support that the fiber still admits.
    pub spawn_frac: f64,
    /// Consecutive unadmitted inputs needed before a new fiber is opened.
    pub spawn_confirm: usize,
    /// Largest nearest-neighbour distance to a fiber's window that the fiber admits;
    /// `None` means unbounded.
    pub link_radius: Option<f64>,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        SignatureConfig {
            capacity: 64,
            k_nn: 8,
            k_eigs: 4,
            zero_tol: 1e-6,
            grid: 0.25,
            energy_tol: 1e-3,
            key_mode: KeyMode::SpectrumSupport,
            source: BufferSource::Observations,
            spawn_frac: 0.1,
            spawn_confirm: 1,
            link_radius: None,
        }
    }
}

impl SignatureConfig {
    pub fn validate(&self) -> Result<(), SignatureError> {
        let bad = |m: &str| Err(SignatureError::InvalidConfig(m.to_string()));
        if self.k_nn == 0 || self.capacity < self.k_nn + 1 {
            return bad("capacity must exceed k_nn >= 1");
        }
        if self.capacity < self.k_eigs + 1 {
            return bad("capacity must exceed k_eigs");
        }
        if !(self.grid > 0.0) || !(self.zero_tol >= 0.0) || !(self.energy_tol >= 0.0) {
            return bad("grid must be positive, tolerances nonnegative");
        }
        if !(0.0..=1.0).contains(&self.spawn_frac) || self.spawn_confirm == 0 {
            return bad("spawn_frac must lie in [0, 1] and spawn_confirm >= 1");
        }
        if matches!(self.link_radius, Some(r) if !(r > 0.0)) {
            return bad("link_radius must be positive");
        }
        Ok(())
    }
}

/// Runs the window pipeline: k-NN graph, normalized Laplacian, spectrum, quantization.
pub fn window_key(window: &[Vec<f64>], cfg: &SignatureConfig) -> Result<SpectralKey, SignatureError> {
    let bandwidth = match median_pairwise_distance(window) {
        Some(m) if m > 0.0 => m,
        _ => 1.0,
    };
    let w = build_knn_graph(window, cfg.k_nn, bandwidth)?;
    let l = normalized_laplacian(&w)?;
    let raw = spectral_signature(&l, cfg.k_eigs, cfg.zero_tol)?;
    Ok(quantize_key(&raw, window, cfg.grid, cfg.energy_tol, cfg.key_mode))
}

#[derive(Clone, Debug)]
struct Fiber {
    window: ObservationBuffer,
    energy_sum: Vec<f64>,
    count: u64,
    key: Option<SpectralKey>,
}

impl Fiber {
    fn new(x: Vec<f64>, capacity: usize) -> Fiber {
        let mut f = Fiber { window: ObservationBuffer::new(capacity), energy_sum: vec![0.0; x.len()], count: 0, key: None };
        f.absorb(x);
        f
    }

    fn absorb(&mut self, x: Vec<f64>) {
        for (e, v) in self.energy_sum.iter_mut().zip(&x) {
            *e += v * v;
        }
        self.count += 1;
        self.window.push(x);
    }

    /// Share of `x`'s energy on coordinates outside this fiber's support.
    fn outside_fraction(&self, x: &[f64], energy_tol: f64) -> f64 {
        let total: f64 = x.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        let outside: f64 = x
            .iter()
            .zip(&self.energy_sum)
            .filter(|(_, &e)| e / n <= energy_tol)
            .map(|(v, _)| v * v)
            .sum();
        outside / total
    }

    fn nearest_distance(&self, x: &[f64]) -> f64 {
        self.window
            .iter()
            .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

/// Result of feeding one input to the condenser.
#[derive(Clone, Debug, PartialEq)]
pub enum Routing {
    /// The input belongs to a fiber with an established key.
    Keyed { fiber: usize, key: SpectralKey },
    /// The input's fiber is still filling (or awaiting confirmation); no key yet.
    Warming { fiber: Option<usize> },
}

impl Routing {
    pub fn key(&self) -> Option<&SpectralKey> {
        match self {
            Routing::Keyed { key, .. } => Some(key),
            Routing::Warming { .. } => None,
        }
    }
}

/// Topological condenser: splits the input stream into fibers and issues one
/// spectral key per fiber.
///
/// Each fiber keeps its own window. The key is computed from that window by
/// [`window_key`] once it holds `k_nn + 1` points and is then fixed, so routing
/// does not flicker as the window slides.
#[derive(Clone, Debug)]
pub struct TopoCondenser {
    cfg: SignatureConfig,
    fibers: Vec<Fiber>,
    unadmitted_run: usize,
}

impl TopoCondenser {
    pub fn new(cfg: SignatureConfig) -> Result<Self, SignatureError> {
        cfg.validate()?;
        Ok(TopoCondenser { cfg, fibers: Vec::new(), unadmitted_run: 0 })
    }

    pub fn config(&self) -> &SignatureConfig {
        &self.cfg
    }

    pub fn n_fibers(&self) -> usize {
        self.fibers.len()
    }

    pub fn keys(&self) -> Vec<&SpectralKey> {
        self.fibers.iter().filter_map(|f| f.key.as_ref()).collect()
    }

    /// Window of fiber `i`, oldest first.
    pub fn fiber_window(&self, i: usize) -> Option<Vec<Vec<f64>>> {
        self.fibers.get(i).map(|f| f.window.snapshot())
    }

    /// Best admissible fiber for `x`, if any.
    fn assign(&self, x: &[f64]) -> Option<usize> {
        let link = self.cfg.link_radius.unwrap_or(f64::INFINITY);
        let mut best: Option<(f64, f64, usize)> = None;
        for (i, f) in self.fibers.iter().enumerate() {
            let dist = f.nearest_distance(x);
            if dist > link {
                continue;
            }
            let outside = if f.window.is_full() {
                let o = f.outside_fraction(x, self.cfg.energy_tol);
                if o > self.cfg.spawn_frac {
                    continue;
                }
                o
            } else {
                0.0
            };
            let better = match best {
                None => true,
                Some((bo, bd, _)) => outside < bo || (outside == bo && dist < bd),
            };
            if better {
                best = Some((outside, dist, i));
            }
        }
        best.map(|(_, _, i)| i)
    }

    /// Feeds `x` to its fiber (opening a new one if needed) and reports the routing.
    pub fn observe(&mut self, x: &[f64]) -> Result<Routing, SignatureError> {
        let fiber = match self.assign(x) {
            Some(i) => {
                self.unadmitted_run = 0;
                self.fibers[i].absorb(x.to_vec());
                i
            }
            None => {
                self.unadmitted_run += 1;
                if !self.fibers.is_empty() && self.unadmitted_run < self.cfg.spawn_confirm {
                    return Ok(Routing::Warming { fiber: None });
                }
                self.unadmitted_run = 0;
                self.fibers.push(Fiber::new(x.to_vec(), self.cfg.capacity));
                self.fibers.len() - 1
            }
        };
        let f = &mut self.fibers[fiber];
        if f.key.is_none() && f.window.len() > self.cfg.k_nn {
            let mut key = window_key(&f.window.snapshot(), &self.cfg)?;
            key.fiber = Some(fiber);
            f.key = Some(key);
        }
        Ok(match &f.key {
            Some(key) => Routing::Keyed { fiber, key: key.clone() },
            None => Routing::Warming { fiber: Some(fiber) },
        })
    }

    /// Read-only lookup used at evaluation time: the key of the fiber `x` would join.
    pub fn route(&self, x: &[f64]) -> Option<&SpectralKey> {
        self.assign(x).and_then(|i| self.fibers[i].key.as_ref())
    }

    /// Support sets (1-based) of every fiber, from its running energy mean.
    pub fn fiber_supports(&self) -> Vec<Vec<usize>> {
        self.fibers
            .iter()
            .map(|f| {
                let n = f.count as f64;
                let mean: Vec<f64> = f.energy_sum.iter().map(|e| e / n).collect();
                support_of(&mean, self.cfg.energy_tol)
            })
            .collect()
    }
}

/// Convenience: the support set (1-based) of a window.
pub fn window_support(window: &[Vec<f64>], energy_tol: f64) -> Vec<usize> {
    support_of(&coordinate_energy(window), energy_tol)
}
