use proptest::prelude::*;

use mtflab_core::envs::{
    apply_permutation, betti_world, invert_permutation, mobius_observe, mobius_stream, BettiConfig, Labeled,
    MobiusConfig, Parity, Target,
};
use mtflab_core::learners::{Model, ModelSpec};
use mtflab_core::memory::{eigen_inv_sqrt, MemoryBank, MemoryConfig};
use mtflab_core::metrics::{adaptation_latency, hessian_negative_density, Trace};
use mtflab_core::numkernel::{newton_schulz_inv_sqrt, sym_eigen, Mat, Rng};
use mtflab_core::signature::{
    build_knn_graph, median_pairwise_distance, normalized_laplacian, quantize_key, spectral_signature, KeyMode,
    RawSignature, SpectralKey,
};

fn sym_from(n: usize, seed: u64) -> Mat {
    let mut rng = Rng::new(seed);
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

fn spd_from(n: usize, seed: u64) -> Mat {
    let mut rng = Rng::new(seed);
    let a = Mat::from_vec(n, n, rng.normal_vec(n * n, 1.0)).unwrap();
    let mut s = a.matmul(&a.transpose()).unwrap();
    s.add_diag(0.5);
    s
}

fn key(i: usize) -> SpectralKey {
    SpectralKey { zero_mult: i, spec_q: vec![], support_q: vec![], fiber: None }
}

fn components(n: usize, w: &Mat) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if w[(i, j)] > 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Spectrum of the median-bandwidth k-NN graph of a point cloud.
fn cloud_spectrum(points: &[Vec<f64>], k_nn: usize) -> RawSignature {
    let bw = median_pairwise_distance(points).unwrap();
    let w = build_knn_graph(points, k_nn, bw).unwrap();
    spectral_signature(&normalized_laplacian(&w).unwrap(), 6, 1e-6).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigen_reconstructs_input(n in 1usize..20, seed in any::<u64>()) {
        let a = sym_from(n, seed);
        let e = sym_eigen(&a).unwrap();
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
        prop_assert!(vtv.max_abs_diff(&Mat::identity(n)) < 1e-10);
        let recon = e.vectors.matmul(&Mat::from_diag(&e.values)).unwrap().matmul(&e.vectors.transpose()).unwrap();
        prop_assert!(recon.max_abs_diff(&a) < 1e-10 * (1.0 + a.max_abs()));
    }

    #[test]
    fn newton_schulz_agrees_with_eigen(n in 1usize..12, seed in any::<u64>()) {
        let s = spd_from(n, seed);
        let ns = newton_schulz_inv_sqrt(&s, 500, 1e-12).unwrap();
        let ev = eigen_inv_sqrt(&s).unwrap();
        prop_assert!(ns.max_abs_diff(&ev) < 1e-5 * (1.0 + ev.max_abs()));
    }

    #[test]
    fn mobius_sheets_use_disjoint_planes(u in 0.0f64..=1.0) {
        let p = mobius_observe(u, Parity::Plus).unwrap();
        let m = mobius_observe(u, Parity::Minus).unwrap();
        prop_assert_eq!(&p[2..], &[0.0, 0.0]);
        prop_assert_eq!(&m[..2], &[0.0, 0.0]);
        prop_assert!(p.iter().chain(&m).all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-15 && (m[2] + m[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mobius_rejects_outside_corridor(u in prop_oneof![-10.0f64..-1e-9, 1.0f64 + 1e-9..10.0]) {
        prop_assert!(mobius_observe(u, Parity::Plus).is_err());
    }

    #[test]
    fn mobius_stream_is_reproducible(seed in any::<u64>(), t in 1usize..50, phases in 1usize..5) {
        let cfg = MobiusConfig { steps_per_phase: t, n_phases: phases, seed };
        let a: Vec<_> = mobius_stream(&cfg).unwrap().collect();
        let b: Vec<_> = mobius_stream(&cfg).unwrap().collect();
        prop_assert_eq!(a.len(), t * phases);
        prop_assert_eq!(&a, &b);
        for s in &a {
            prop_assert_eq!(s.phase, Parity::of_phase(s.t / t).sign());
        }
    }

    #[test]
    fn permutation_is_bijection(n in 1usize..300, seed in any::<u64>()) {
        let p = Rng::new(seed).permutation(n);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let img: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let back = apply_permutation(&apply_permutation(&img, &p), &invert_permutation(&p));
        prop_assert_eq!(back, img);
    }

    #[test]
    fn spectrum_invariant_under_rigid_motion(
        seed in any::<u64>(),
        angle in 0.0f64..std::f64::consts::TAU,
        shift in prop::array::uniform2(-100.0f64..100.0),
    ) {
        let mut rng = Rng::new(seed);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal(), 2.0 * rng.normal()]).collect();
        let (c, s) = (angle.cos(), angle.sin());
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| vec![c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]]).collect();
        let a = cloud_spectrum(&pts, 6);
        let b = cloud_spectrum(&moved, 6);
        prop_assert_eq!(a.zero_mult, b.zero_mult);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() < 1e-8, "{} vs {}", x, y);
        }
    }

    #[test]
    fn latency_monotone_in_epsilon(
        losses in prop::collection::vec(0.0f64..1.0, 2..200),
        e1 in 1e-4f64..1.0,
        e2 in 1e-4f64..1.0,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let tr = Trace::from_losses(&losses);
        match (adaptation_latency(&tr, 0, lo), adaptation_latency(&tr, 0, hi)) {
            (Ok(a), Ok(b)) => prop_assert!(b <= a),
            (Ok(_), Err(_)) => prop_assert!(false, "looser threshold failed to recover"),
            _ => {}
        }
    }

    #[test]
    fn hard_blocks_are_disjoint_and_orthogonal(max_keys in 1usize..6, per in 1usize..5, seed in any::<u64>()) {
        let d = max_keys * per + seed as usize % 3;
        let mut bank = MemoryBank::new(d, MemoryConfig { max_keys, ..Default::default() }).unwrap();
        let mut rng = Rng::new(seed);
        for i in 0..max_keys {
            let idx = bank.retrieve_or_allocate(&key(i)).unwrap();
            let z: Vec<Vec<f64>> = (0..3 * d).map(|_| rng.normal_vec(d, 1.0)).collect();
            bank.refine_warp(idx, &z).unwrap();
        }
        prop_assert!(bank.retrieve_or_allocate(&key(max_keys)).is_err());
        let e = bank.entries();
        for a in 0..e.len() {
            for b in (a + 1)..e.len() {
                prop_assert!(e[a].block.iter().all(|i| !e[b].block.contains(i)));
                let prod = e[a].embedded_warp(d).matmul(&e[b].embedded_warp(d).transpose()).unwrap();
                prop_assert_eq!(prod.max_abs(), 0.0);
                prop_assert_eq!(bank.cross_overlap(&key(a), &key(b)).unwrap().value, 0.0);
            }
        }
    }

    #[test]
    fn hits_count_retrievals(calls in prop::collection::vec(0usize..3, 1..60)) {
        let mut bank = MemoryBank::new(6, MemoryConfig { max_keys: 3, ..Default::default() }).unwrap();
        let mut expected = [0u64; 3];
        let mut last = [0u64; 3];
        for &c in &calls {
            bank.retrieve_or_allocate(&key(c)).unwrap();
            expected[c] += 1;
            let h = bank.get(&key(c)).unwrap().hits;
            prop_assert!(h > last[c]);
            last[c] = h;
        }
        for (c, &n) in expected.iter().enumerate() {
            prop_assert_eq!(bank.get(&key(c)).map_or(0, |e| e.hits), n);
        }
    }

    #[test]
    fn first_refinement_whitens_batch(k in 1usize..8, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut mix = Mat::identity(k);
        for v in mix.as_mut_slice() {
            *v += 0.3 * rng.normal();
        }
        let z: Vec<Vec<f64>> = (0..20 * k).map(|_| mix.mat_vec(&rng.normal_vec(k, 1.0)).unwrap()).collect();
        let cfg = MemoryConfig { max_keys: 1, ridge: 0.0, ns_tol: 1e-12, ns_max_iters: 500, ..Default::default() };
        let mut bank = MemoryBank::new(k, cfg).unwrap();
        let idx = bank.retrieve_or_allocate(&key(0)).unwrap();
        let r = bank.refine_warp(idx, &z).unwrap();
        prop_assert!(r.residual < 1e-6, "residual {}", r.residual);
    }

    #[test]
    fn quantization_stable_inside_cells(
        cells in prop::collection::vec((0u32..8, -0.4f64..0.4), 1..5),
        jitter in prop::collection::vec(-0.05f64..0.05, 5),
    ) {
        let grid = 0.25;
        let base: Vec<f64> = cells.iter().map(|&(m, f)| (m as f64 + f) * grid).collect();
        let moved: Vec<f64> = base.iter().zip(&jitter).map(|(v, j)| v + j * grid).collect();
        let window = [vec![1.0, 0.0]];
        let qa = quantize_key(&RawSignature { eigenvalues: base, zero_mult: 1 }, &window, grid, 1e-3, KeyMode::SpectrumSupport);
        let qb = quantize_key(&RawSignature { eigenvalues: moved, zero_mult: 1 }, &window, grid, 1e-3, KeyMode::SpectrumSupport);
        prop_assert_eq!(qa, qb);
    }
}

fn permute_hidden(model: &Model, perm: &[usize]) -> Model {
    let dims = model.backbone.dims().to_vec();
    let (n_in, h, n_out) = (dims[0], dims[1], dims[2]);
    let p = model.params();
    let mut q = p.clone();
    let l0 = model.backbone.layer_range(0).start;
    let l1 = model.backbone.layer_range(1).start;
    for (new, &old) in perm.iter().enumerate() {
        for j in 0..n_in {
            q[l0 + new * n_in + j] = p[l0 + old * n_in + j];
        }
        q[l0 + h * n_in + new] = p[l0 + h * n_in + old];
        for o in 0..n_out {
            q[l1 + o * h + new] = p[l1 + o * h + old];
        }
    }
    let mut m = model.clone();
    m.set_params(&q).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_multiplicity_counts_graph_components(beta1 in 0usize..5, seed in any::<u64>()) {
        let n = 100 * beta1.max(1);
        let world = betti_world(&BettiConfig { beta1, n_samples: n, seed, ..Default::default() }).unwrap();
        let pts: Vec<Vec<f64>> = world.samples.iter().map(|s| s.x.clone()).collect();
        let w = build_knn_graph(&pts, 10, 1.0).unwrap();
        let sig = spectral_signature(&normalized_laplacian(&w).unwrap(), 1, 1e-8).unwrap();
        let comps = components(n, &w);
        prop_assert_eq!(sig.zero_mult, comps);
        // Loops are spaced far apart, so no edge joins two of them.
        prop_assert!(comps >= beta1.max(1));
    }

    #[test]
    fn hessian_density_ignores_hidden_unit_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let spec = ModelSpec { dims: vec![2, 6, 4], ..ModelSpec::betti_probe() };
        let model = Model::new(&spec, seed).unwrap();
        let perm = Rng::new(shuffle).permutation(6);
        let permuted = permute_hidden(&model, &perm);
        let mut rng = Rng::new(seed ^ 1);
        let xs: Vec<Vec<f64>> = (0..12).map(|_| rng.normal_vec(2, 1.0)).collect();
        let batch: Vec<Labeled> = xs.iter().map(|x| Labeled { x, y: Target::Value(0.5 * x[0]) }).collect();
        // Same function of the input.
        let (la, _) = model.batch_loss_and_grad(&batch).unwrap();
        let (lb, _) = permuted.batch_loss_and_grad(&batch).unwrap();
        prop_assert!((la - lb).abs() < 1e-12);
        let da = hessian_negative_density(&model, &batch, 1e-4, 1e-6).unwrap();
        let db = hessian_negative_density(&permuted, &batch, 1e-4, 1e-6).unwrap();
        prop_assert_eq!(da, db);
    }
}
