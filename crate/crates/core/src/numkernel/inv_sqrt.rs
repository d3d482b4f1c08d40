use super::eigen::check_symmetric;
use super::{LinalgError, Mat};

pub const DEFAULT_NS_TOL: f64 = 1e-8;
pub const DEFAULT_NS_MAX_ITERS: usize = 100;

/// Coupled Newton–Schulz iteration for `sigma^(-1/2)`.
///
/// The input is divided by its trace so every eigenvalue lies in (0, 1], the
/// iteration runs on the rescaled matrix, and the result is multiplied by
/// `trace^(-1/2)`. Convergence is declared when `‖W·sigma·Wᵀ − I‖_F ≤ tol`.
pub fn newton_schulz_inv_sqrt(sigma: &Mat, max_iters: usize, tol: f64) -> Result<Mat, LinalgError> {
    check_symmetric(sigma)?;
    if !is_positive_definite(sigma) {
        return Err(LinalgError::NotSpd);
    }
    let n = sigma.rows();
    let c = sigma.trace();
    let unscale = 1.0 / c.sqrt();
    let eye = Mat::identity(n);

    let mut y = sigma.scaled(1.0 / c);
    let mut z = Mat::identity(n);
    let mut w = z.scaled(unscale);
    let mut residual = whitening_residual(&w, sigma)?;
    if residual <= tol {
        return Ok(w);
    }
    for _ in 0..max_iters {
        let t = eye.scaled(3.0).sub(&z.matmul(&y)?)?.scaled(0.5);
        y = y.matmul(&t)?;
        z = t.matmul(&z)?;
        w = z.symmetrized().scaled(unscale);
        if !w.is_finite() {
            return Err(LinalgError::NotFinite);
        }
        residual = whitening_residual(&w, sigma)?;
        if residual <= tol {
            return Ok(w);
        }
    }
    Err(LinalgError::MaxItersExceeded { last: w, residual })
}

/// `‖W·sigma·Wᵀ − I‖_F`.
pub fn whitening_residual(w: &Mat, sigma: &Mat) -> Result<f64, LinalgError> {
    let prod = w.matmul(sigma)?.matmul(&w.transpose())?;
    Ok(prod.sub(&Mat::identity(prod.rows()))?.frobenius_norm())
}

/// Cholesky-based positive-definiteness test.
pub fn is_positive_definite(a: &Mat) -> bool {
    cholesky(a).is_some()
}

/// Lower-triangular Cholesky factor, or `None` when `a` is not positive definite.
pub fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}
