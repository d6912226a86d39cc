use ndarray::Array2;
use obdsd::metrics::{embedding_density, nmi, recall_at_k, spectral_decay, DensityDistance};
use obdsd::trainer::contrastive_loss_and_grad;
use obdsd::*;
use proptest::prelude::*;

fn matrix(
    n: std::ops::RangeInclusive<usize>,
    d: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Array2<f64>> {
    (n, d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-1.0f64..1.0, n * d)
            .prop_filter("rows need norm", move |v| {
                v.chunks(d).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-2)
            })
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn unit(v: &Array2<f64>, labels: Vec<usize>) -> EmbeddingBatch<f64> {
    l2_normalize(&RawEmbeddingBatch::new(v.clone(), labels).unwrap()).unwrap()
}

fn cyclic(n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|i| i % c).collect()
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_is_idempotent(v in matrix(1..=8, 1..=6)) {
        let once = unit(&v, vec![0; v.nrows()]);
        let twice = unit(&once.vectors().to_owned(), vec![0; v.nrows()]);
        for (a, b) in once.vectors().iter().zip(twice.vectors().iter()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        for row in once.vectors().rows() {
            prop_assert!((row.dot(&row) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobian_output_is_tangent(v in matrix(2..=2, 2..=6)) {
        let g = normalization_jacobian_apply(v.row(0), v.row(1)).unwrap();
        prop_assert!(g.dot(&v.row(0)).abs() < 1e-12 * (1.0 + max_abs(&v)));
    }

    #[test]
    fn cosine_is_scale_invariant(v in matrix(2..=8, 2..=5), s in 0.1f64..50.0) {
        let a = cosine_similarity_matrix(&unit(&v, vec![0; v.nrows()])).into_inner();
        let b = cosine_similarity_matrix(&unit(&v.mapv(|x| x * s), vec![0; v.nrows()])).into_inner();
        prop_assert!(max_abs(&(&a - &b)) < 1e-14);
        prop_assert!(a.iter().all(|x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(x)));
    }

    #[test]
    fn solvers_agree(v in matrix(2..=12, 2..=5), omega in 0.05f64..0.95) {
        let batch = unit(&v, vec![0; v.nrows()]);
        let closed = DiffusionParams::new(omega).unwrap();
        let mut iter = closed.with_mode(SolverMode::Iterative);
        iter.tol = 1e-13;
        iter.max_iter = 20_000;
        let a = refine_batch(&batch, &closed).unwrap().refined.into_inner();
        let b = refine_batch(&batch, &iter).unwrap().refined.into_inner();
        prop_assert!(max_abs(&(&a - &b)) < 1e-8);
    }

    #[test]
    fn diffusion_is_linear_in_the_initial_matrix(v in matrix(3..=9, 2..=4), omega in 0.05f64..0.95, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let batch = unit(&v, vec![0; v.nrows()]);
        let graph = build_affinity_batch(&batch, &DiffusionParams::new(omega).unwrap()).unwrap();
        let s = transition_matrix(&graph).unwrap();
        let n = v.nrows();
        let d1 = cosine_similarity_matrix(&batch).into_inner();
        let d2 = Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let f = |d: &Array2<f64>| diffuse_closed_form(&s, d.view(), omega).unwrap().into_inner();
        let mixed = f(&(&d1 * a + &d2 * b));
        let split = f(&d1) * a + f(&d2) * b;
        prop_assert!(max_abs(&(&mixed - &split)) < 1e-9 * (1.0 + max_abs(&split)));
    }

    #[test]
    fn small_omega_changes_stay_small(v in matrix(2..=10, 2..=4), omega in 1e-6f64..1e-3) {
        let r = refine_batch(&unit(&v, vec![0; v.nrows()]), &DiffusionParams::new(omega).unwrap()).unwrap();
        let diff = r.refined.into_inner() - r.similarity.into_inner();
        // Spectrum of S lies in [-1, 1], so ‖A − D‖₂ ≤ 2ω/(1+ω)·‖D‖₂ and ‖D‖₂ ≤ n.
        prop_assert!(max_abs(&diff) <= 2.0 * omega / (1.0 + omega) * (v.nrows() as f64) + 1e-12);
    }

    #[test]
    fn recall_is_monotone_in_k(v in matrix(6..=16, 2..=4), classes in 2usize..4) {
        let batch = unit(&v, cyclic(v.nrows(), classes));
        let ks: Vec<usize> = (1..v.nrows()).collect();
        let r = recall_at_k(&batch, &ks).unwrap();
        let vals: Vec<f64> = r.values().copied().collect();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*vals.last().unwrap(), 1.0);
    }

    #[test]
    fn nmi_is_symmetric_and_label_invariant(a in prop::collection::vec(0usize..4, 2..30), shift in 1usize..10) {
        let b: Vec<usize> = a.iter().enumerate().map(|(i, x)| (x + i) % 3).collect();
        let x = nmi(&a, &b).unwrap();
        prop_assert!((x - nmi(&b, &a).unwrap()).abs() < 1e-12);
        let renamed: Vec<usize> = a.iter().map(|l| (l + shift) * 7).collect();
        prop_assert!((x - nmi(&renamed, &b).unwrap()).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x));
    }

    #[test]
    fn density_is_rotation_invariant(v in matrix(6..=12, 2..=2), theta in 0.0f64..std::f64::consts::TAU) {
        let labels = cyclic(v.nrows(), 3);
        let (c, s) = (theta.cos(), theta.sin());
        let rotated = Array2::from_shape_fn(v.raw_dim(), |(i, k)| {
            if k == 0 { c * v[[i, 0]] - s * v[[i, 1]] } else { s * v[[i, 0]] + c * v[[i, 1]] }
        });
        let a = embedding_density(&unit(&v, labels.clone()), DensityDistance::Euclidean);
        let b = embedding_density(&unit(&rotated, labels), DensityDistance::Euclidean);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((a.ratio - b.ratio).abs() < 1e-9 * (1.0 + a.ratio));
        }
    }

    #[test]
    fn spectral_decay_ignores_row_order(v in matrix(8..=14, 4..=6), rot in 1usize..7) {
        let n = v.nrows();
        let perm = Array2::from_shape_fn(v.raw_dim(), |(i, k)| v[[(i + rot) % n, k]]);
        let a = spectral_decay(&unit(&v, vec![0; n]), 2).unwrap();
        let b = spectral_decay(&unit(&perm, vec![0; n]), 2).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn weight_ramp(tau in 0.1f64..4.0, lambda in 0.0f64..10.0, total in 1usize..50) {
        let cfg = DistillConfig { tau, lambda, epoch: 0, total_epochs: total, dynamic: true };
        let ws: Vec<f64> = (0..=total).map(|e| dynamic_weight(&cfg.at_epoch(e)).unwrap()).collect();
        prop_assert!(ws.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(ws[0], 0.0);
        prop_assert!((ws[total] - tau * tau * lambda).abs() < 1e-12 * (1.0 + tau * tau * lambda));
        let doubled = DistillConfig { lambda: 2.0 * lambda, ..cfg.at_epoch(total / 2) };
        let w = dynamic_weight(&cfg.at_epoch(total / 2)).unwrap();
        prop_assert!((dynamic_weight(&doubled).unwrap() - 2.0 * w).abs() < 1e-12 * (1.0 + w));
    }

    #[test]
    fn losses_are_nonnegative(v in matrix(2..=8, 2..=5), t in matrix(8..=8, 2..=5), tau in 0.2f64..3.0) {
        let n = v.nrows();
        let student = unit(&v, cyclic(n, 2));
        let tv = t.slice(ndarray::s![..n, ..]).to_owned();
        let teacher = cosine_similarity_matrix(&unit(&tv, vec![0; n])).into_inner();
        prop_assert!(psd_loss(teacher.view(), &cosine_similarity_matrix(&student), tau).unwrap() >= 0.0);
        let raw = RawEmbeddingBatch::new(v.clone(), cyclic(n, 2)).unwrap();
        prop_assert!(contrastive_loss_and_grad(&raw, 0.2).unwrap().0 >= 0.0);
    }
}
