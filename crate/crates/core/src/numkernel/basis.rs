use super::{dot, norm};

/// Orthonormal basis for the span of `vectors` by twice-iterated Gram–Schmidt.
///
/// A vector is dropped when its residual norm falls below `rel_tol` times its
/// original norm, so numerically dependent inputs do not inflate the basis.
pub fn orthonormal_basis(vectors: &[Vec<f64>], rel_tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let n0 = norm(v);
        if n0 == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&r, b);
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&r);
        if n > rel_tol * n0 {
            r.iter_mut().for_each(|x| *x /= n);
            basis.push(r);
        }
    }
    basis
}

/// Removes from `v` its component in the span of the orthonormal `basis`.
pub fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_dependent_vectors() {
        let vs = vec![vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        let b = orthonormal_basis(&vs, 1e-10);
        assert_eq!(b.len(), 2);
        let mut v = vec![3.0, 4.0, 5.0];
        project_out(&mut v, &b);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15 && (v[2] - 5.0).abs() < 1e-15);
    }
}
