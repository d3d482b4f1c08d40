//! Dense linear algebra and seeded randomness shared by every other module.
//!
//! All routines here are pure functions of their inputs.

mod basis;
mod eigen;
mod inv_sqrt;
mod mat;
mod rng;

use thiserror::Error;

pub use basis::{orthonormal_basis, project_out};
pub use eigen::{count_eigenvalues_below, sym_eigen, SymEigen, SYM_TOL};
pub use inv_sqrt::{
    cholesky, is_positive_definite, newton_schulz_inv_sqrt, whitening_residual, DEFAULT_NS_MAX_ITERS,
    DEFAULT_NS_TOL,
};
pub use mat::Mat;
pub use rng::Rng;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix has non-finite entries")]
    NotFinite,
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("Newton-Schulz did not converge (residual {residual:e})")]
    MaxItersExceeded { last: Mat, residual: f64 },
}

/// Parameters for a symmetric positive-definiteness check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdCheck {
    pub sym_tol: f64,
    pub min_eig: f64,
}

impl Default for SpdCheck {
    fn default() -> Self {
        SpdCheck { sym_tol: SYM_TOL, min_eig: 0.0 }
    }
}

impl SpdCheck {
    /// True when `a` is symmetric within `sym_tol` and its smallest eigenvalue exceeds `min_eig`.
    pub fn accepts(&self, a: &Mat) -> bool {
        if !a.is_square() || !a.is_finite() || a.symmetry_error() > self.sym_tol {
            return false;
        }
        let mut shifted = a.symmetrized();
        shifted.add_diag(-self.min_eig);
        is_positive_definite(&shifted)
    }
}

/// Dot product of equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
