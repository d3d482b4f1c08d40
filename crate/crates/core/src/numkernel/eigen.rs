use super::{LinalgError, Mat};

/// Absolute symmetry tolerance accepted by [`sym_eigen`], scaled by max(1, max|a|).
pub const SYM_TOL: f64 = 1e-9;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Mat,
}

pub(crate) fn check_symmetric(a: &Mat) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if !a.is_finite() {
        return Err(LinalgError::NotFinite);
    }
    let err = a.symmetry_error();
    if err > SYM_TOL * a.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { max_asymmetry: err });
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver for dense symmetric matrices.
///
/// Sweeps rotate every off-diagonal pair until the off-diagonal mass is negligible
/// relative to the Frobenius norm. Intended for dimensions up to a few hundred.
pub fn sym_eigen(a: &Mat) -> Result<SymEigen, LinalgError> {
    check_symmetric(a)?;
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = Mat::identity(n);
    let total = m.frobenius_norm();
    if n <= 1 || total == 0.0 {
        return Ok(sorted(m.diag(), v));
    }
    let target = (f64::EPSILON * total).powi(2);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                m[(p, p)] -= t * apq;
                m[(q, q)] += t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let g = m[(r, p)];
                        let h = m[(r, q)];
                        let rp = g - s * (h + g * tau);
                        let rq = h + s * (g - h * tau);
                        m[(r, p)] = rp;
                        m[(p, r)] = rp;
                        m[(r, q)] = rq;
                        m[(q, r)] = rq;
                    }
                }
                for r in 0..n {
                    let g = v[(r, p)];
                    let h = v[(r, q)];
                    v[(r, p)] = g - s * (h + g * tau);
                    v[(r, q)] = h + s * (g - h * tau);
                }
            }
        }
    }
    Ok(sorted(m.diag(), v))
}

fn sorted(values: Vec<f64>, vectors: Mat) -> SymEigen {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let mut vecs = Mat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, new)] = vectors[(r, old)];
        }
    }
    SymEigen {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: vecs,
    }
}

/// Counts eigenvalues of a symmetric matrix strictly below `x`.
///
/// Householder reduction to tridiagonal form followed by a Sturm sequence count.
/// Cheaper than a full decomposition when only the inertia is needed.
pub fn count_eigenvalues_below(a: &Mat, x: f64) -> Result<usize, LinalgError> {
    check_symmetric(a)?;
    let (d, e) = tridiagonalize(&a.symmetrized());
    Ok(sturm_count(&d, &e, x))
}

/// Householder tridiagonalization. Returns the diagonal and the sub-diagonal.
fn tridiagonalize(a: &Mat) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows();
    let mut m = a.clone();
    let mut sub = vec![0.0; n.saturating_sub(1)];
    for k in 0..n.saturating_sub(2) {
        let alpha_sq: f64 = ((k + 1)..n).map(|i| m[(i, k)] * m[(i, k)]).sum();
        let norm = alpha_sq.sqrt();
        if norm == 0.0 {
            sub[k] = 0.0;
            continue;
        }
        let alpha = if m[(k + 1, k)] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[k + 1] = m[(k + 1, k)] - alpha;
        for i in (k + 2)..n {
            v[i] = m[(i, k)];
        }
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            sub[k] = m[(k + 1, k)];
            continue;
        }
        // A <- H A H with H = I - 2 v vᵀ / (vᵀv), via p = A v, K = vᵀp / vᵀv.
        let beta = 2.0 / vnorm_sq;
        let mut p = vec![0.0; n];
        for i in k..n {
            p[i] = beta * (k..n).map(|j| m[(i, j)] * v[j]).sum::<f64>();
        }
        let kk = 0.5 * beta * (k..n).map(|i| v[i] * p[i]).sum::<f64>();
        let q: Vec<f64> = (0..n).map(|i| p[i] - kk * v[i]).collect();
        for i in k..n {
            for j in k..n {
                m[(i, j)] -= v[i] * q[j] + q[i] * v[j];
            }
        }
        sub[k] = alpha;
    }
    if n >= 2 {
        sub[n - 2] = m[(n - 1, n - 2)];
    }
    (m.diag(), sub)
}

/// Number of eigenvalues of the symmetric tridiagonal (d, e) below x.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        let off = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] };
        q = if i == 0 { d[0] - x } else { d[i] - x - off / q };
        if q == 0.0 {
            q = -f64::EPSILON * (d[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}
