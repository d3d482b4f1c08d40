//! Independent reference computations shared by the oracle tests and the acceptance report.

use mtflab_core::backbone::{Activation, Backbone};
use mtflab_core::numkernel::{newton_schulz_inv_sqrt, sym_eigen, Mat, Rng};
use mtflab_core::signature::{normalized_laplacian, spectral_signature};

pub fn random_sym(rng: &mut Rng, n: usize) -> Mat {
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.normal();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

pub fn random_spd(rng: &mut Rng, n: usize) -> Mat {
    let a = Mat::from_vec(n, n, rng.normal_vec(n * n, 1.0)).unwrap();
    let mut s = a.matmul(&a.transpose()).unwrap();
    s.add_diag(0.1 * n as f64);
    s
}

/// Roots of the characteristic polynomial of a symmetric 2x2 matrix, ascending.
pub fn roots_2x2(a: &Mat) -> Vec<f64> {
    let (p, q, r) = (a[(0, 0)], a[(0, 1)], a[(1, 1)]);
    let mean = 0.5 * (p + r);
    let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    vec![mean - rad, mean + rad]
}

/// Roots of the characteristic cubic of a symmetric 3x3 matrix (trigonometric form), ascending.
pub fn roots_3x3(a: &Mat) -> Vec<f64> {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return vec![q; 3];
    }
    let mut b = a.clone();
    b.add_diag(-q);
    let b = b.scaled(1.0 / p);
    let det = b[(0, 0)] * (b[(1, 1)] * b[(2, 2)] - b[(1, 2)] * b[(2, 1)])
        - b[(0, 1)] * (b[(1, 0)] * b[(2, 2)] - b[(1, 2)] * b[(2, 0)])
        + b[(0, 2)] * (b[(1, 0)] * b[(2, 1)] - b[(1, 1)] * b[(2, 0)]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut v = vec![e1, e2, e3];
    v.sort_by(f64::total_cmp);
    v
}

/// Largest gap between `sym_eigen` and the closed-form roots over random 2x2 and 3x3 matrices.
pub fn char_poly_error(n_each: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_each {
        let a2 = random_sym(&mut rng, 2);
        let a3 = random_sym(&mut rng, 3);
        for (a, roots) in [(&a2, roots_2x2(&a2)), (&a3, roots_3x3(&a3))] {
            let e = sym_eigen(a).unwrap();
            for (x, y) in e.values.iter().zip(&roots) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

pub fn eigen_inv_sqrt_oracle(s: &Mat) -> Mat {
    let e = sym_eigen(s).unwrap();
    let n = s.rows();
    let mut out = Mat::zeros(n, n);
    for k in 0..n {
        let v = e.vectors.col(k);
        let w = e.values[k].powf(-0.5);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += w * v[i] * v[j];
            }
        }
    }
    out
}

/// Largest Frobenius gap between Newton–Schulz and the eigendecomposition route.
pub fn newton_schulz_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for n in [2, 3, 5, 8, 16, 32] {
        for _ in 0..3 {
            let s = random_spd(&mut rng, n);
            let ns = newton_schulz_inv_sqrt(&s, 500, 1e-12).unwrap();
            worst = worst.max(ns.sub(&eigen_inv_sqrt_oracle(&s)).unwrap().frobenius_norm());
        }
    }
    worst
}

pub fn union_find_components(n: usize, w: &Mat) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if w[(i, j)] > 0.0 {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| root(&mut parent, i) == i).count()
}

/// Random weighted graphs whose Laplacian zero multiplicity disagrees with union-find.
pub fn zero_mult_mismatches(n_graphs: usize, seed: u64) -> usize {
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..n_graphs {
        let n = 5 + rng.below(20);
        let density = 0.05 + 0.3 * rng.uniform();
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.uniform() < density {
                    let v = 0.2 + rng.uniform();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        let sig = spectral_signature(&normalized_laplacian(&w).unwrap(), 1, 1e-8).unwrap();
        bad += usize::from(sig.zero_mult != union_find_components(n, &w));
    }
    bad
}

/// Largest relative gap between backprop and central differences of `g·z(θ)` over random nets.
pub fn gradient_error(n_nets: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for net in 0..n_nets {
        let depth = 1 + rng.below(3);
        let mut dims = vec![1 + rng.below(6)];
        for _ in 0..depth {
            dims.push(1 + rng.below(32));
        }
        let act = if net % 4 == 3 { Activation::Identity } else { Activation::Tanh };
        let mut bb = Backbone::random(&dims, act, &mut rng).unwrap();
        let x = rng.normal_vec(dims[0], 1.0);
        let g_z = rng.normal_vec(*dims.last().unwrap(), 1.0);
        let (_, tape) = bb.forward(&x).unwrap();
        let analytic = bb.backward_from_feature_grad(&tape, &g_z).unwrap();
        let theta = bb.params().to_vec();
        let f = |bb: &Backbone| -> f64 { bb.features(&x).unwrap().iter().zip(&g_z).map(|(a, b)| a * b).sum() };
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            bb.set_params(&p).unwrap();
            let fp = f(&bb);
            p[i] -= 2.0 * h;
            bb.set_params(&p).unwrap();
            let fm = f(&bb);
            let fd = (fp - fm) / (2.0 * h);
            let scale = fd.abs().max(analytic[i].abs());
            let err = if scale < 1e-6 { (fd - analytic[i]).abs() } else { (fd - analytic[i]).abs() / scale };
            worst = worst.max(err);
        }
    }
    worst
}
