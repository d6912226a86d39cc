//! Progressive self-distillation: softened similarity rows, the KL
//! distillation loss, its dynamic weight, and the analytic gradient with
//! respect to the raw (pre-normalization) student embeddings.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffusion::RefinedSimilarity;
use crate::embedding::{gram, project_tangent, RawEmbeddingBatch, SimilarityMatrix, ZERO_NORM_THRESHOLD};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig<T> {
    /// Softmax temperature.
    pub tau: T,
    /// Final distillation weight.
    pub lambda: T,
    /// Current epoch, 0-based.
    pub epoch: usize,
    pub total_epochs: usize,
    /// Ramp the weight linearly with `epoch / total_epochs`.
    pub dynamic: bool,
}

impl<T: Real> DistillConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::InvalidParameter("total_epochs must be positive".into()));
        }
        if self.epoch > self.total_epochs {
            return Err(Error::InvalidParameter(format!(
                "epoch {} exceeds total_epochs {}",
                self.epoch, self.total_epochs
            )));
        }
        Ok(())
    }

    pub fn at_epoch(mut self, epoch: usize) -> Self {
        self.epoch = epoch;
        self
    }
}

/// Row-stochastic matrix `σ(M_i,: / τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTarget<T>(Array2<T>);

impl<T: Real> SoftTarget<T> {
    pub fn view(&self) -> ArrayView2<'_, T> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_tau<T: Real>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")))
    }
}

/// Row-wise log-softmax of `m / τ` with max subtraction.
fn log_softmax_rows<T: Real>(m: ArrayView2<'_, T>, tau: T) -> Array2<T> {
    let mut out = m.mapv(|x| x / tau);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

pub fn row_softmax<T: Real>(m: ArrayView2<'_, T>, tau: T) -> Result<SoftTarget<T>> {
    check_tau(tau)?;
    let mut p = log_softmax_rows(m, tau);
    p.mapv_inplace(T::exp);
    Ok(SoftTarget(p))
}

/// `(1/n) Σ_i KL(σ(target_i/τ) ‖ σ(student_i/τ))`, diagonal included.
pub fn psd_loss<T: Real>(target: ArrayView2<'_, T>, student: &SimilarityMatrix<T>, tau: T) -> Result<T> {
    check_tau(tau)?;
    if target.dim() != student.view().dim() {
        return Err(Error::ShapeMismatch(format!(
            "target is {:?}, student similarity is {:?}",
            target.dim(),
            student.view().dim()
        )));
    }
    let log_p = log_softmax_rows(target, tau);
    let log_q = log_softmax_rows(student.view(), tau);
    let n = T::from_usize_lossy(target.nrows());
    let total: T = log_p
        .iter()
        .zip(log_q.iter())
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum();
    // Each KL term is nonnegative; clip round-off below zero.
    Ok((total / n).max(T::zero()))
}

/// Distillation loss against a diffusion-refined teacher similarity.
pub fn obdsd_loss<T: Real>(teacher: &RefinedSimilarity<T>, student: &SimilarityMatrix<T>, tau: T) -> Result<T> {
    psd_loss(teacher.view(), student, tau)
}

/// `τ²·(t/T)·λ`, or `τ²·λ` when the ramp is disabled.
pub fn dynamic_weight<T: Real>(cfg: &DistillConfig<T>) -> Result<T> {
    cfg.validate()?;
    let base = cfg.tau * cfg.tau * cfg.lambda;
    if cfg.dynamic {
        Ok(base * T::from_usize_lossy(cfg.epoch) / T::from_usize_lossy(cfg.total_epochs))
    } else {
        Ok(base)
    }
}

/// Norm of the attention part `z_j − (z_i·z_j) z_i` for unit `z_i, z_j`.
pub fn attention_factor<T: Real>(zi: ArrayView1<'_, T>, zj: ArrayView1<'_, T>) -> T {
    let c = zi.dot(&zj);
    let mut r = zj.to_owned();
    r.zip_mut_with(&zi, |x, &a| *x -= c * a);
    r.dot(&r).sqrt()
}

/// Own-anchor contribution `Σ_j (z_j − (z_i·z_j) z_i)(Q_ij − P_ij)` where `Q`
/// is the student's soft row and `P` the target's. Lies in the tangent space
/// at `z_i`.
pub fn anchor_contribution<T: Real>(
    unit_rows: ArrayView2<'_, T>,
    student_soft: &SoftTarget<T>,
    target_soft: &SoftTarget<T>,
    anchor: usize,
) -> Array1<T> {
    let zi = unit_rows.row(anchor);
    let mut out = Array1::zeros(unit_rows.ncols());
    for (j, zj) in unit_rows.axis_iter(Axis(0)).enumerate() {
        let diff = student_soft.0[[anchor, j]] - target_soft.0[[anchor, j]];
        let c = zi.dot(&zj);
        out.zip_mut_with(&zj, |o, &b| *o += diff * b);
        out.zip_mut_with(&zi, |o, &a| *o -= diff * c * a);
    }
    out
}

/// Loss value and `∂L/∂v` for the full batch.
///
/// Every `z_i` enters its own row and, as a column, every other anchor's row,
/// so `∂L/∂z = (E + Eᵀ) Z / (nτ)` with `E = Q − P`; the diagonal term
/// `z_i·z_i` is covered by both halves. The normalization Jacobian then maps
/// each row back to `v_i`.
pub fn psd_loss_and_grad<T: Real>(
    student_raw: &RawEmbeddingBatch<T>,
    target_soft: &SoftTarget<T>,
    tau: T,
) -> Result<(T, Array2<T>)> {
    check_tau(tau)?;
    let n = student_raw.len();
    if target_soft.0.dim() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "target is {:?} for a batch of {n}",
            target_soft.0.dim()
        )));
    }
    let raw = student_raw.vectors();
    let mut norms = Array1::zeros(n);
    let mut z = raw.to_owned();
    for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= T::lit(ZERO_NORM_THRESHOLD)) {
            return Err(Error::ZeroNormRow(i));
        }
        norms[i] = norm;
        row.mapv_inplace(|x| x / norm);
    }
    let sims = gram(z.view());
    let log_q = log_softmax_rows(sims.view(), tau);
    let p = &target_soft.0;

    let nt = T::from_usize_lossy(n);
    let mut loss = T::zero();
    let mut e = Array2::zeros((n, n));
    for ((ev, &lq), &pv) in e.iter_mut().zip(log_q.iter()).zip(p.iter()) {
        if pv > T::zero() {
            loss += pv * (pv.ln() - lq);
        }
        *ev = lq.exp() - pv;
    }
    let sym = &e + &e.t();
    let scale = T::one() / (nt * tau);
    let grad_z = sym.dot(&z).mapv(|x| x * scale);

    let mut grad_v = Array2::zeros((n, raw.ncols()));
    for i in 0..n {
        let g = project_tangent(raw.row(i), grad_z.row(i), norms[i]);
        grad_v.row_mut(i).assign(&g);
    }
    Ok(((loss / nt).max(T::zero()), grad_v))
}

/// `∂L_PSD/∂v` for the full batch; see [`psd_loss_and_grad`].
pub fn psd_grad<T: Real>(student_raw: &RawEmbeddingBatch<T>, target_soft: &SoftTarget<T>, tau: T) -> Result<Array2<T>> {
    psd_loss_and_grad(student_raw, target_soft, tau).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_uniform_row() {
        let s = row_softmax(array![[0.3_f64, 0.3, 0.3]].view(), 0.7).unwrap();
        for &x in s.view().iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_high_temperature_flattens() {
        let s = row_softmax(array![[1.0_f64, -1.0, 0.5, 0.0]].view(), 1e6).unwrap();
        for &x in s.view().iter() {
            assert!((x - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_two_entries() {
        let s = row_softmax(array![[1.0, 0.0]].view(), 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((s.view()[[0, 0]] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s.view()[[0, 1]] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((s.view()[[0, 0]] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_tau() {
        assert!(row_softmax(array![[1.0]].view(), 0.0).is_err());
        assert!(row_softmax(array![[1.0]].view(), -1.0).is_err());
    }

    #[test]
    fn weight_schedule() {
        let cfg = DistillConfig {
            tau: 1.0,
            lambda: 1000.0,
            epoch: 0,
            total_epochs: 150,
            dynamic: true,
        };
        assert_eq!(dynamic_weight(&cfg).unwrap(), 0.0);
        assert_eq!(dynamic_weight(&cfg.at_epoch(75)).unwrap(), 500.0);
        let end = DistillConfig {
            lambda: 3.5,
            ..cfg.at_epoch(150)
        };
        assert_eq!(dynamic_weight(&end).unwrap(), 3.5);
        let fixed = DistillConfig {
            tau: 2.0,
            dynamic: false,
            ..cfg
        };
        assert_eq!(dynamic_weight(&fixed).unwrap(), 4000.0);
        assert!(dynamic_weight(&cfg.at_epoch(151)).is_err());
    }

    #[test]
    fn loss_shape_mismatch() {
        let d = SimilarityMatrix::from_matrix(Array2::<f64>::eye(3)).unwrap();
        assert!(psd_loss(Array2::<f64>::eye(2).view(), &d, 1.0).is_err());
    }

    #[test]
    fn easy_positive_has_vanishing_attention() {
        let theta: f64 = 1e-4;
        let zi = array![1.0, 0.0];
        let zj = array![theta.cos(), theta.sin()];
        let f = attention_factor(zi.view(), zj.view());
        let c = zi.dot(&zj);
        assert!((f - (1.0 - c * c).sqrt()).abs() < 1e-12);
        assert!(f < 1e-3);
    }
}
