use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RawSignature, SignatureError};

/// Which parts of the window enter the key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// Quantized spectrum and zero multiplicity only.
    Spectrum,
    /// Spectrum plus the active-coordinate support set.
    SpectrumSupport,
}

/// Discrete task key.
///
/// Canonical form: `z<zero_mult>|s<spec_q,..>|f<support_q,..>`, with an optional
/// `|c<fiber>` suffix when the key was issued by a fiber tracker.
#[derive(Clone, Debug)]
pub struct SpectralKey {
    pub zero_mult: usize,
    /// Quantized eigenvalues, nondecreasing, each in [0, 2].
    pub spec_q: Vec<f64>,
    /// 1-based coordinates whose mean energy exceeds the threshold, ascending.
    pub support_q: Vec<usize>,
    pub fiber: Option<usize>,
}

impl SpectralKey {
    pub fn canonical(&self) -> String {
        let spec: Vec<String> = self.spec_q.iter().map(|v| format!("{v}")).collect();
        let supp: Vec<String> = self.support_q.iter().map(|v| v.to_string()).collect();
        let mut s = format!("z{}|s{}|f{}", self.zero_mult, spec.join(","), supp.join(","));
        if let Some(c) = self.fiber {
            s.push_str(&format!("|c{c}"));
        }
        s
    }

    fn identity(&self) -> (usize, Vec<u64>, &[usize], Option<usize>) {
        // -0.0 and 0.0 compare equal, so normalise before hashing bits.
        let bits = self.spec_q.iter().map(|v| (v + 0.0).to_bits()).collect();
        (self.zero_mult, bits, &self.support_q, self.fiber)
    }
}

impl PartialEq for SpectralKey {
    fn eq(&self, other: &Self) -> bool {
        self.identity() == other.identity()
    }
}

impl Eq for SpectralKey {}

impl Hash for SpectralKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.identity().hash(state);
    }
}

impl fmt::Display for SpectralKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for SpectralKey {
    type Err = SignatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SignatureError::BadKey(s.to_string());
        let mut parts = s.split('|');
        let z = parts.next().and_then(|p| p.strip_prefix('z')).ok_or_else(bad)?;
        let spec = parts.next().and_then(|p| p.strip_prefix('s')).ok_or_else(bad)?;
        let supp = parts.next().and_then(|p| p.strip_prefix('f')).ok_or_else(bad)?;
        let fiber = match parts.next() {
            Some(c) => Some(c.strip_prefix('c').ok_or_else(bad)?.parse().map_err(|_| bad())?),
            None => None,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        fn list(body: &str) -> Vec<&str> {
            if body.is_empty() {
                Vec::new()
            } else {
                body.split(',').collect()
            }
        }
        Ok(SpectralKey {
            zero_mult: z.parse().map_err(|_| bad())?,
            spec_q: list(spec).into_iter().map(|v| v.parse().map_err(|_| bad())).collect::<Result<_, _>>()?,
            support_q: list(supp).into_iter().map(|v| v.parse().map_err(|_| bad())).collect::<Result<_, _>>()?,
            fiber,
        })
    }
}

/// Mean squared value of every coordinate over the window.
pub fn coordinate_energy(window: &[Vec<f64>]) -> Vec<f64> {
    let d = window.first().map_or(0, |p| p.len());
    let mut e = vec![0.0; d];
    for p in window {
        for (acc, v) in e.iter_mut().zip(p) {
            *acc += v * v;
        }
    }
    let n = window.len().max(1) as f64;
    e.iter_mut().for_each(|v| *v /= n);
    e
}

/// 1-based indices whose energy exceeds `energy_tol`.
pub fn support_of(energy: &[f64], energy_tol: f64) -> Vec<usize> {
    energy.iter().enumerate().filter(|(_, &e)| e > energy_tol).map(|(i, _)| i + 1).collect()
}

/// Rounds the raw spectrum to `grid` and attaches the window's support set.
pub fn quantize_key(raw: &RawSignature, window: &[Vec<f64>], grid: f64, energy_tol: f64, mode: KeyMode) -> SpectralKey {
    let spec_q = raw
        .eigenvalues
        .iter()
        .map(|&v| ((v / grid).round() * grid).clamp(0.0, 2.0) + 0.0)
        .collect();
    let support_q = match mode {
        KeyMode::Spectrum => Vec::new(),
        KeyMode::SpectrumSupport => support_of(&coordinate_energy(window), energy_tol),
    };
    SpectralKey { zero_mult: raw.zero_mult, spec_q, support_q, fiber: None }
}
