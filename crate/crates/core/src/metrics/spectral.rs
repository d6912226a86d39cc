use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::scalar::Real;

/// Largest singular values dropped by default for a more robust estimate.
pub const DEFAULT_EXCLUDE_TOP: usize = 2;

/// `KL(U ‖ s)` between the uniform distribution and the normalized singular
/// spectrum of the embedding matrix after removing the `exclude_top` largest
/// values. The spectrum has `d` entries; when `n < d` the missing values are
/// zero and the divergence is undefined.
pub fn spectral_decay<T: Real>(batch: &EmbeddingBatch<T>, exclude_top: usize) -> Result<T> {
    let d = batch.dim();
    if d <= exclude_top {
        return Err(Error::InvalidParameter(format!(
            "embedding dimension {d} must exceed exclude_top {exclude_top}"
        )));
    }
    let mut spectrum = singular_values(batch.vectors());
    spectrum.resize(d, T::zero());
    let rest = &spectrum[exclude_top..];
    let total: T = rest.iter().copied().sum();
    if !(total >= T::lit(1e-12)) {
        return Err(Error::RankDeficient(format!("remaining spectrum sums to {total}")));
    }
    if let Some(pos) = rest.iter().position(|&s| !(s > T::zero())) {
        return Err(Error::RankDeficient(format!(
            "singular value {} is zero",
            pos + exclude_top
        )));
    }
    let m = T::from_usize_lossy(rest.len());
    let u = T::one() / m;
    let kl = rest.iter().map(|&s| u * (u / (s / total)).ln()).sum::<T>();
    Ok(kl.max(T::zero()))
}
