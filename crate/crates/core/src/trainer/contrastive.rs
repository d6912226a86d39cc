//! Pairwise contrastive baseline used as the metric-learning term.

use ndarray::{Array1, Array2, Axis};

use crate::embedding::{gram, project_tangent, RawEmbeddingBatch, ZERO_NORM_THRESHOLD};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mean over unordered pairs of `1 − z_i·z_j` (same class) or
/// `max(0, z_i·z_j − margin)` (different class), with `∂L/∂v`.
pub fn contrastive_loss_and_grad<T: Real>(raw: &RawEmbeddingBatch<T>, margin: T) -> Result<(T, Array2<T>)> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::NoValidPairs);
    }
    let v = raw.vectors();
    let mut norms = Array1::zeros(n);
    let mut z = v.to_owned();
    for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= T::lit(ZERO_NORM_THRESHOLD)) {
            return Err(Error::ZeroNormRow(i));
        }
        norms[i] = norm;
        row.mapv_inplace(|x| x / norm);
    }
    let sims = gram(z.view());
    let labels = raw.labels();
    let pairs = T::from_usize_lossy(n * (n - 1) / 2);

    // coef[i][j] = ∂L/∂(z_i·z_j) for i ≠ j, scaled by the pair count below.
    let mut coef = Array2::<T>::zeros((n, n));
    let mut loss = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = sims[[i, j]];
            let c = if labels[i] == labels[j] {
                loss += T::one() - s;
                -T::one()
            } else if s > margin {
                loss += s - margin;
                T::one()
            } else {
                T::zero()
            };
            coef[[i, j]] = c / pairs;
            coef[[j, i]] = c / pairs;
        }
    }
    let grad_z = coef.dot(&z);
    let mut grad_v = Array2::zeros(v.raw_dim());
    for i in 0..n {
        grad_v
            .row_mut(i)
            .assign(&project_tangent(v.row(i), grad_z.row(i), norms[i]));
    }
    Ok((loss / pairs, grad_v))
}
