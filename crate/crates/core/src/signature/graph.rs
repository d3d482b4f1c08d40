use super::SignatureError;
use crate::numkernel::{sym_eigen, Mat};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of all pairwise Euclidean distances; `None` for fewer than two points.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> Option<f64> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    Some(if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) })
}

/// Symmetric k-NN adjacency with Gaussian weights `exp(-d²/bandwidth²)`.
///
/// `i ~ j` when either point is among the other's `k_nn` nearest neighbours
/// (ties broken by index). The diagonal is zero.
pub fn build_knn_graph(points: &[Vec<f64>], k_nn: usize, bandwidth: f64) -> Result<Mat, SignatureError> {
    let n = points.len();
    if n < k_nn + 1 {
        return Err(SignatureError::BufferTooSmall { len: n, needed: k_nn + 1 });
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(SignatureError::InvalidBandwidth(bandwidth));
    }
    let mut d2 = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(&points[i], &points[j]);
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    let mut w = Mat::zeros(n, n);
    let h2 = bandwidth * bandwidth;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
        for &j in order.iter().take(k_nn) {
            let v = (-d2[(i, j)] / h2).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

/// `L = I − D^{-1/2} W D^{-1/2}`, with `L_ii = 0` for isolated vertices.
pub fn normalized_laplacian(w: &Mat) -> Result<Mat, SignatureError> {
    if !w.is_square() {
        return Err(SignatureError::NotSquare);
    }
    let n = w.rows();
    if w.as_slice().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(SignatureError::NegativeWeight);
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let off = -inv_sqrt_deg[i] * w[(i, j)] * inv_sqrt_deg[j];
            l[(i, j)] = if i == j {
                if inv_sqrt_deg[i] > 0.0 {
                    1.0 + off
                } else {
                    0.0
                }
            } else {
                off
            };
        }
    }
    Ok(l)
}

/// Smallest nonzero Laplacian eigenvalues and the zero multiplicity.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSignature {
    /// Up to `k` smallest eigenvalues at or above `zero_tol`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues below `zero_tol`.
    pub zero_mult: usize,
}

pub fn spectral_signature(l: &Mat, k: usize, zero_tol: f64) -> Result<RawSignature, SignatureError> {
    if l.rows() < k + 1 {
        return Err(SignatureError::InsufficientSpectrum { nodes: l.rows(), k });
    }
    let eig = sym_eigen(l)?;
    let zero_mult = eig.values.iter().filter(|&&v| v < zero_tol).count();
    let eigenvalues = eig.values.iter().copied().filter(|&v| v >= zero_tol).take(k).collect();
    Ok(RawSignature { eigenvalues, zero_mult })
}
