//! Finite-difference verification of every analytic gradient the trainer
//! relies on, plus stationarity of the diffusion objective at the
//! closed-form solution.

use std::path::PathBuf;

use clap::Args;
use ndarray::{Array1, Array2, ArrayView2};
use obdsd::diffusion::{
    affinity_from_similarity, diffuse_closed_form, obdp_objective, refine_batch, transition_matrix, DiffusionParams,
};
use obdsd::distill::{psd_loss, psd_loss_and_grad, row_softmax};
use obdsd::embedding::{cosine_similarity_matrix, l2_normalize, RawEmbeddingBatch};
use obdsd::trainer::contrastive_loss_and_grad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::hash_json;
use crate::error::{CliError, CliResult};
use crate::io::write_json;

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Random instances per suite.
    #[arg(long, default_value_t = 50)]
    pub trials: usize,

    /// Perturb the analytic distillation gradient (negative control).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckThresholds {
    pub distill_rel_error: f64,
    pub baseline_rel_error: f64,
    /// Bound on `max|∇J(A)| / (1 + ‖D‖∞)`.
    pub stationarity: f64,
    pub fd_step: f64,
}

impl Default for GradcheckThresholds {
    fn default() -> Self {
        Self {
            distill_rel_error: 1e-5,
            baseline_rel_error: 1e-5,
            stationarity: 1e-6,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub trials: usize,
    pub thresholds: GradcheckThresholds,
    pub psd_max_rel_error: f64,
    pub obdsd_max_rel_error: f64,
    pub baseline_max_rel_error: f64,
    pub stationarity_max: f64,
    /// `J(A) ≤ J(D)` and `J(A) ≤ J(A + δ)` held on every instance.
    pub objective_minimal: bool,
    pub passed: bool,
}

/// Everything needed to replay a failing check.
#[derive(Debug, Clone, Serialize)]
pub struct FailureInstance {
    pub suite: &'static str,
    pub trial: usize,
    pub tau: f64,
    pub omega: f64,
    pub margin: f64,
    pub labels: Vec<usize>,
    pub student: Vec<Vec<f64>>,
    pub target_logits: Vec<Vec<f64>>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub error: f64,
}

fn rows(m: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    loop {
        let m: Array2<f64> = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng));
        if m.rows().into_iter().all(|r| r.dot(&r).sqrt() > 0.3) {
            return m;
        }
    }
}

/// `‖a − f‖∞ / max(‖a‖∞, ‖f‖∞, 1e-12)`.
pub fn relative_error(analytic: ArrayView2<'_, f64>, numeric: ArrayView2<'_, f64>) -> f64 {
    let inf = |m: ArrayView2<'_, f64>| m.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let diff = &analytic - &numeric;
    inf(diff.view()) / inf(analytic).max(inf(numeric)).max(1e-12)
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + h;
        let plus = f(&probe);
        probe[[i, j]] = orig - h;
        let minus = f(&probe);
        probe[[i, j]] = orig;
        g[[i, j]] = (plus - minus) / (2.0 * h);
    }
    g
}

fn distill_value(v: &Array2<f64>, logits: ArrayView2<'_, f64>, tau: f64) -> f64 {
    let raw = RawEmbeddingBatch::unlabeled(v.clone()).expect("shape");
    let z = l2_normalize(&raw).expect("nonzero rows");
    psd_loss(logits, &cosine_similarity_matrix(&z), tau).expect("valid instance")
}

const TAUS: [f64; 3] = [0.5, 1.0, 2.0];
const OMEGAS: [f64; 4] = [0.1, 0.5, 0.9, 0.99];

/// Runs all suites; returns the report and the worst failing instance, if
/// any check breached its threshold.
pub fn run_suite(seed: u64, trials: usize, corrupt: bool) -> CliResult<(GradcheckReport, Option<FailureInstance>)> {
    if trials == 0 {
        return Err(CliError::Validation("trials must be at least 1".into()));
    }
    let th = GradcheckThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failure: Option<FailureInstance> = None;
    let mut note = |inst: FailureInstance| {
        if failure.as_ref().is_none_or(|f| f.error < inst.error) {
            failure = Some(inst);
        }
    };
    let (mut psd_max, mut obdsd_max, mut base_max, mut stat_max) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let mut minimal = true;

    for trial in 0..trials {
        // Distillation gradients: n ≤ 8, d ≤ 6.
        let n = rng.random_range(2..=8);
        let d = rng.random_range(2..=6);
        let tau = TAUS[trial % TAUS.len()];
        let omega = OMEGAS[trial % OMEGAS.len()];
        let student = gaussian(&mut rng, n, d);
        let teacher = l2_normalize(&RawEmbeddingBatch::unlabeled(gaussian(&mut rng, n, d))?)?;
        let psd_logits = cosine_similarity_matrix(&teacher).into_inner();
        let obdsd_logits = refine_batch(&teacher, &DiffusionParams::new(omega)?)?
            .refined
            .into_inner();

        for (suite, logits) in [("psd", &psd_logits), ("obdsd", &obdsd_logits)] {
            let soft = row_softmax(logits.view(), tau)?;
            let raw = RawEmbeddingBatch::unlabeled(student.clone())?;
            let (_, mut analytic) = psd_loss_and_grad(&raw, &soft, tau)?;
            if corrupt {
                analytic[[0, 0]] += 1e-3;
            }
            let numeric = numeric_gradient(&student, th.fd_step, |v| distill_value(v, logits.view(), tau));
            let err = relative_error(analytic.view(), numeric.view());
            if suite == "psd" {
                psd_max = psd_max.max(err);
            } else {
                obdsd_max = obdsd_max.max(err);
            }
            if !(err < th.distill_rel_error) {
                note(FailureInstance {
                    suite,
                    trial,
                    tau,
                    omega,
                    margin: 0.0,
                    labels: vec![],
                    student: rows(student.view()),
                    target_logits: rows(logits.view()),
                    analytic: rows(analytic.view()),
                    numeric: rows(numeric.view()),
                    error: err,
                });
            }
        }

        // Baseline contrastive gradient, away from hinge kinks.
        let (v, labels, margin) = loop {
            let v = gaussian(&mut rng, n.max(3), d);
            let classes = (n.max(3) / 2).max(2);
            let labels: Vec<usize> = (0..v.nrows()).map(|i| i % classes).collect();
            let margin = rng.random_range(0.0..0.5);
            let z = l2_normalize(&RawEmbeddingBatch::unlabeled(v.clone())?)?;
            let sims = cosine_similarity_matrix(&z).into_inner();
            let near_kink =
                (0..v.nrows()).any(|i| (0..i).any(|j| labels[i] != labels[j] && (sims[[i, j]] - margin).abs() < 1e-3));
            if !near_kink {
                break (v, labels, margin);
            }
        };
        let loss = |m: &Array2<f64>| {
            let raw = RawEmbeddingBatch::new(m.clone(), labels.clone()).expect("shape");
            contrastive_loss_and_grad(&raw, margin).expect("valid").0
        };
        let (_, analytic) = contrastive_loss_and_grad(&RawEmbeddingBatch::new(v.clone(), labels.clone())?, margin)?;
        let numeric = numeric_gradient(&v, th.fd_step, loss);
        let err = relative_error(analytic.view(), numeric.view());
        base_max = base_max.max(err);
        if !(err < th.baseline_rel_error) {
            note(FailureInstance {
                suite: "baseline",
                trial,
                tau: 0.0,
                omega: 0.0,
                margin,
                labels: labels.clone(),
                student: rows(v.view()),
                target_logits: vec![],
                analytic: rows(analytic.view()),
                numeric: rows(numeric.view()),
                error: err,
            });
        }

        // Stationarity of the diffusion objective at the closed form. The
        // objective's minimizer is the fixed point only when no degree was
        // floored, so instances with isolated nodes are redrawn.
        let params = DiffusionParams::new(omega)?;
        let (z, dmat, graph) = loop {
            let m = rng.random_range(2..=20);
            let z = l2_normalize(&RawEmbeddingBatch::unlabeled(gaussian(&mut rng, m, d))?)?;
            let dmat = cosine_similarity_matrix(&z).into_inner();
            let graph = affinity_from_similarity(dmat.view(), &params)?;
            if graph.degenerate_nodes().is_empty() {
                break (z, dmat, graph);
            }
        };
        let s = transition_matrix(&graph)?;
        let a = diffuse_closed_form(&s, dmat.view(), omega)?.into_inner();
        let degrees: Array1<f64> = graph.degrees().clone();
        let objective =
            |x: &Array2<f64>| obdp_objective(x.view(), graph.weights(), &degrees, dmat.view(), omega).expect("valid");
        let grad = numeric_gradient(&a, 1e-5, objective);
        let d_inf = dmat.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()));
        let ratio = grad.iter().fold(0.0_f64, |acc, &g| acc.max(g.abs())) / (1.0 + d_inf);
        stat_max = stat_max.max(ratio);
        let at_a = objective(&a);
        let mut ok = at_a <= objective(&dmat);
        for _ in 0..10 {
            let mut delta: Array2<f64> = Array2::from_shape_simple_fn(a.raw_dim(), || rng.random_range(-1.0..1.0));
            let scale = delta.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()));
            delta.mapv_inplace(|x| 0.01 * x / scale);
            ok &= at_a <= objective(&(&a + &delta));
        }
        minimal &= ok;
        if ratio > th.stationarity || !ok {
            note(FailureInstance {
                suite: "stationarity",
                trial,
                tau: 0.0,
                omega,
                margin: 0.0,
                labels: vec![],
                student: rows(z.vectors()),
                target_logits: rows(dmat.view()),
                analytic: rows(a.view()),
                numeric: rows(grad.view()),
                error: ratio,
            });
        }
    }

    let passed = psd_max < th.distill_rel_error
        && obdsd_max < th.distill_rel_error
        && base_max < th.baseline_rel_error
        && stat_max <= th.stationarity
        && minimal;
    let report = GradcheckReport {
        seed,
        trials,
        thresholds: th,
        psd_max_rel_error: psd_max,
        obdsd_max_rel_error: obdsd_max,
        baseline_max_rel_error: base_max,
        stationarity_max: stat_max,
        objective_minimal: minimal,
        passed,
    };
    Ok((report, failure))
}

#[derive(Serialize)]
struct Identity {
    command: &'static str,
    seed: u64,
    trials: usize,
    corrupt_gradient: bool,
}

pub fn run(args: GradcheckArgs, seed: u64, out_dir: PathBuf) -> CliResult<()> {
    let (report, failure) = run_suite(seed, args.trials, args.corrupt_gradient)?;
    let hash = hash_json(&Identity {
        command: "gradcheck",
        seed,
        trials: args.trials,
        corrupt_gradient: args.corrupt_gradient,
    });
    let mut json = serde_json::to_value(&report).expect("report serializes");
    json["config_hash"] = serde_json::Value::String(hash.clone());
    write_json(&out_dir.join("gradcheck.json"), &json)?;
    println!("{json}");
    if let Some(instance) = failure {
        let path = out_dir.join("gradcheck_failure.json");
        let mut record = serde_json::to_value(&instance).expect("instance serializes");
        record["config_hash"] = serde_json::Value::String(hash);
        write_json(&path, &record)?;
        return Err(CliError::CheckFailed(format!(
            "{} check breached its threshold (error {:e}); instance saved to {}",
            instance.suite,
            instance.error,
            path.display()
        )));
    }
    Ok(())
}
