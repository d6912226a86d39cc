//! Independent oracles for the numerical kernels: dense inverses and SVDs
//! from nalgebra, brute-force enumeration, and reference values computed
//! outside this crate.

use nalgebra::DMatrix;
use ndarray::{array, Array2};
use obdsd::metrics::{embedding_density, nmi, recall_at_k, spectral_decay, DensityDistance};
use obdsd::trainer::contrastive_loss_and_grad;
use obdsd::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_raw(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingBatch<f64> {
    let raw = RawEmbeddingBatch::unlabeled(random_raw(rng, n, d)).unwrap();
    l2_normalize(&raw).unwrap()
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `S` built entry by entry from the similarity matrix.
fn transition_oracle(sims: &Array2<f64>) -> Array2<f64> {
    let n = sims.nrows();
    let w = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { sims[[i, j]].max(0.0) });
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum().max(1e-8)).collect();
    Array2::from_shape_fn((n, n), |(i, j)| w[[i, j]] / (deg[i] * deg[j]).sqrt())
}

#[test]
fn transition_matrix_matches_entrywise_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = DiffusionParams::new(0.5).unwrap();
    for n in [2, 5, 13] {
        let batch = random_unit(&mut rng, n, 4);
        let sims = cosine_similarity_matrix(&batch).into_inner();
        let graph = build_affinity_batch(&batch, &params).unwrap();
        let s = transition_matrix(&graph).unwrap();
        assert!(max_abs_diff(&s.view().to_owned(), &transition_oracle(&sims)) < 1e-14);
    }
}

#[test]
fn closed_form_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (trial, omega) in [0.1, 0.5, 0.9, 0.99].into_iter().cycle().take(12).enumerate() {
        let n = 2 + trial % 15;
        let batch = random_unit(&mut rng, n, 3);
        let params = DiffusionParams::new(omega).unwrap();
        let refined = refine_batch(&batch, &params).unwrap();
        let d = to_na(&refined.similarity.view().to_owned());
        let s = to_na(&transition_oracle(&refined.similarity.view().to_owned()));
        let system = DMatrix::identity(n, n) - s * omega;
        let oracle = system.try_inverse().unwrap() * d * (1.0 - omega);
        let got = to_na(&refined.refined.view().to_owned());
        let scale = 1.0 + oracle.amax();
        assert!((got - oracle).amax() < 1e-10 * scale, "n={n} omega={omega}");
    }
}

#[test]
fn iterative_agrees_with_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (trial, omega) in [0.1, 0.5, 0.9, 0.99].into_iter().cycle().take(20).enumerate() {
        let batch = random_unit(&mut rng, 2 + trial % 19, 5);
        let mut params = DiffusionParams::new(omega).unwrap().with_mode(SolverMode::Iterative);
        params.tol = 1e-12;
        params.max_iter = 100_000;
        let iter = refine_batch(&batch, &params).unwrap().refined.into_inner();
        let closed = refine_batch(&batch, &params.with_mode(SolverMode::ClosedForm))
            .unwrap()
            .refined
            .into_inner();
        assert!(max_abs_diff(&iter, &closed) < 1e-8, "trial {trial}");
    }
}

#[test]
fn tiny_omega_returns_initial_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = random_unit(&mut rng, 9, 4);
    let r = refine_batch(&batch, &DiffusionParams::new(1e-9).unwrap()).unwrap();
    assert!(max_abs_diff(&r.refined.into_inner(), &r.similarity.into_inner()) < 1e-7);
}

#[test]
fn singular_values_match_nalgebra_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, d) in [(3, 3), (10, 4), (4, 10), (20, 7)] {
        let m = random_raw(&mut rng, n, d);
        let ours = linalg::singular_values(m.view());
        let mut theirs: Vec<f64> = to_na(&m).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(ours.len(), n.min(d));
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b), "{a} vs {b}");
        }
    }
}

#[test]
fn spectral_decay_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, d, skip) in [(12, 5, 2), (30, 8, 0), (8, 8, 3)] {
        let batch = random_unit(&mut rng, n, d);
        let mut s: Vec<f64> = to_na(&batch.vectors().to_owned())
            .singular_values()
            .iter()
            .copied()
            .collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let rest = &s[skip..];
        let total: f64 = rest.iter().sum();
        let u = 1.0 / rest.len() as f64;
        let oracle: f64 = rest.iter().map(|x| u * (u / (x / total)).ln()).sum();
        assert!((spectral_decay(&batch, skip).unwrap() - oracle).abs() < 1e-10);
    }
}

/// Recall by counting, for each same-class candidate, how many gallery
/// items outrank it.
fn recall_brute(sims: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    let mut hits = 0;
    for q in 0..n {
        let hit = (0..n).filter(|&j| j != q && labels[j] == labels[q]).any(|j| {
            let ahead = (0..n)
                .filter(|&m| m != q && m != j)
                .filter(|&m| sims[[q, m]] > sims[[q, j]] || (sims[[q, m]] == sims[[q, j]] && m < j))
                .count();
            ahead < k
        });
        hits += hit as usize;
    }
    hits as f64 / n as f64
}

fn crafted_twelve() -> EmbeddingBatch<f64> {
    // Four classes of three on the circle, with one point of class 1
    // parked next to class 2 and an exact duplicate pair to exercise ties.
    let deg: [f64; 12] = [0., 8., 16., 90., 97., 190., 180., 186., 200., 270., 270., 300.];
    let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 0, 3];
    let v = Array2::from_shape_fn((12, 2), |(i, c)| {
        let r = deg[i].to_radians();
        if c == 0 {
            r.cos()
        } else {
            r.sin()
        }
    });
    EmbeddingBatch::from_unit_rows(v, labels).unwrap()
}

#[test]
fn recall_matches_brute_force() {
    let batch = crafted_twelve();
    let ks: Vec<usize> = (1..=11).collect();
    let got = recall_at_k(&batch, &ks).unwrap();
    let sims = cosine_similarity_matrix(&batch).into_inner();
    for &k in &ks {
        assert_eq!(got[&k], recall_brute(&sims, batch.labels(), k), "k={k}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [4, 9, 20] {
        let raw = RawEmbeddingBatch::new(random_raw(&mut rng, n, 3), (0..n).map(|i| i % 3).collect()).unwrap();
        let batch = l2_normalize(&raw).unwrap();
        let sims = cosine_similarity_matrix(&batch).into_inner();
        let got = recall_at_k(&batch, &[1, 2, 3]).unwrap();
        for k in 1..=3 {
            assert_eq!(got[&k], recall_brute(&sims, batch.labels(), k));
        }
    }
}

#[test]
fn nmi_matches_reference_value() {
    let a = [0, 0, 0, 1, 1, 1, 2, 2];
    let l = [0, 0, 1, 1, 1, 2, 2, 2];
    assert!((nmi(&a, &l).unwrap() - 0.5588730382170324).abs() < 1e-12);
}

#[test]
fn nmi_matches_contingency_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [5, 12, 20] {
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let l: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let nf = n as f64;
        let mut table = [[0.0f64; 3]; 4];
        for (&x, &y) in a.iter().zip(&l) {
            table[x][y] += 1.0;
        }
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..3).map(|c| table.iter().map(|r| r[c]).sum()).collect();
        let h = |v: &[f64]| {
            -v.iter()
                .filter(|&&c| c > 0.0)
                .map(|c| c / nf * (c / nf).ln())
                .sum::<f64>()
        };
        let mut mi = 0.0;
        for (i, r) in table.iter().enumerate() {
            for (j, &c) in r.iter().enumerate() {
                if c > 0.0 {
                    mi += c / nf * (c * nf / (rows[i] * cols[j])).ln();
                }
            }
        }
        let oracle = 2.0 * mi / (h(&rows) + h(&cols));
        assert!((nmi(&a, &l).unwrap() - oracle).abs() < 1e-12);
    }
}

fn crafted_density() -> EmbeddingBatch<f64> {
    let deg = [0.0f64, 10.0, 20.0, 120.0, 130.0, 140.0, 240.0, 250.0, 275.0];
    let v = Array2::from_shape_fn((9, 2), |(i, c)| {
        let r = deg[i].to_radians();
        if c == 0 {
            r.cos()
        } else {
            r.sin()
        }
    });
    EmbeddingBatch::from_unit_rows(v, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]).unwrap()
}

#[test]
fn density_matches_pair_enumeration() {
    let b = crafted_density();
    let e = embedding_density(&b, DensityDistance::Euclidean).unwrap();
    assert!((e.intra - 0.2889378850032285).abs() < 1e-10);
    assert!((e.inter - 1.7004434497047276).abs() < 1e-10);
    assert!((e.ratio - 0.1699191378892376).abs() < 1e-10);
    let c = embedding_density(&b, DensityDistance::CosineDistance).unwrap();
    assert!((c.intra - 0.052346240226833506).abs() < 1e-10);
    assert!((c.inter - 1.481289246823984).abs() < 1e-10);
    assert!((c.ratio - 0.035338297593848406).abs() < 1e-10);
}

fn central_diff(f: impl Fn(&Array2<f64>) -> f64, at: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(at.raw_dim());
    let mut x = at.clone();
    for idx in 0..at.len() {
        let (i, j) = (idx / at.ncols(), idx % at.ncols());
        let orig = x[[i, j]];
        x[[i, j]] = orig + h;
        let up = f(&x);
        x[[i, j]] = orig - h;
        let down = f(&x);
        x[[i, j]] = orig;
        g[[i, j]] = (up - down) / (2.0 * h);
    }
    g
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(1e-12f64, |m, x| m.max(x.abs()));
    max_abs_diff(a, b) / scale
}

#[test]
fn psd_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..24 {
        let n = 2 + trial % 7;
        let d = 2 + trial % 5;
        let tau = [0.5, 1.0, 2.0][trial % 3];
        let v = random_raw(&mut rng, n, d);
        let teacher = cosine_similarity_matrix(&random_unit(&mut rng, n, d)).into_inner();
        let soft = row_softmax(teacher.view(), tau).unwrap();
        let raw = RawEmbeddingBatch::unlabeled(v.clone()).unwrap();
        let analytic = psd_grad(&raw, &soft, tau).unwrap();
        let loss = |x: &Array2<f64>| {
            let z = l2_normalize(&RawEmbeddingBatch::unlabeled(x.clone()).unwrap()).unwrap();
            psd_loss(teacher.view(), &cosine_similarity_matrix(&z), tau).unwrap()
        };
        let numeric = central_diff(loss, &v, 1e-6);
        assert!(rel_err(&analytic, &numeric) < 1e-5, "trial {trial}");
    }
}

#[test]
fn normalization_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for d in 2..7 {
        let v = random_raw(&mut rng, 1, d);
        let up = random_raw(&mut rng, 1, d);
        let analytic = normalization_jacobian_apply(v.row(0), up.row(0)).unwrap();
        let f = |x: &Array2<f64>| {
            let norm = x.row(0).dot(&x.row(0)).sqrt();
            x.row(0).iter().zip(up.row(0)).map(|(a, b)| a / norm * b).sum::<f64>()
        };
        let numeric = central_diff(f, &v, 1e-6);
        for k in 0..d {
            assert!((analytic[k] - numeric[[0, k]]).abs() < 1e-8);
        }
    }
}

#[test]
fn contrastive_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 15 {
        let n = 2 + checked % 7;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let v = random_raw(&mut rng, n, 4);
        let margin = 0.2;
        let z = l2_normalize(&RawEmbeddingBatch::unlabeled(v.clone()).unwrap()).unwrap();
        let sims = cosine_similarity_matrix(&z).into_inner();
        // Skip draws sitting near a hinge kink.
        if sims.iter().any(|s| (s - margin).abs() < 1e-3) {
            continue;
        }
        let raw = RawEmbeddingBatch::new(v.clone(), labels.clone()).unwrap();
        let (_, analytic) = contrastive_loss_and_grad(&raw, margin).unwrap();
        let loss = |x: &Array2<f64>| {
            contrastive_loss_and_grad(&RawEmbeddingBatch::new(x.clone(), labels.clone()).unwrap(), margin)
                .unwrap()
                .0
        };
        assert!(rel_err(&analytic, &central_diff(loss, &v, 1e-6)) < 1e-6);
        checked += 1;
    }
}

#[test]
fn contrastive_value_matches_pair_enumeration() {
    let z = array![[1.0_f64, 0.0], [0.6, 0.8], [0.0, 1.0]];
    let raw = RawEmbeddingBatch::new(z, vec![0, 0, 1]).unwrap();
    let (loss, _) = contrastive_loss_and_grad(&raw, 0.2).unwrap();
    // (1 - 0.6) + max(0, 0 - 0.2) + max(0, 0.8 - 0.2), over three pairs.
    assert!((loss - (0.4 + 0.0 + 0.6) / 3.0).abs() < 1e-15);
}

#[test]
fn huge_temperature_flattens_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let student = cosine_similarity_matrix(&random_unit(&mut rng, 6, 3));
    let teacher = cosine_similarity_matrix(&random_unit(&mut rng, 6, 3)).into_inner();
    assert!(psd_loss(teacher.view(), &student, 1e6).unwrap() < 1e-10);
}

#[test]
fn self_target_has_zero_loss_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for tau in [0.5, 1.0, 2.0] {
        let v = random_raw(&mut rng, 7, 4);
        let raw = RawEmbeddingBatch::unlabeled(v).unwrap();
        let sims = cosine_similarity_matrix(&l2_normalize(&raw).unwrap());
        let soft = row_softmax(sims.view(), tau).unwrap();
        let (loss, grad) = psd_loss_and_grad(&raw, &soft, tau).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() <= 1e-12));
        assert!(psd_loss(sims.view(), &sims, tau).unwrap() == 0.0);
    }
}
