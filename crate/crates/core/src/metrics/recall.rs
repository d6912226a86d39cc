use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::embedding::{gram, EmbeddingBatch};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Recall@K over every sample as a query, self excluded. Neighbors are
/// ranked by cosine similarity with ties broken toward the lower index.
pub fn recall_at_k<T: Real>(gallery: &EmbeddingBatch<T>, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let n = gallery.len();
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if ks.contains(&0) {
        return Err(Error::InvalidParameter("recall cutoffs must be positive".into()));
    }
    if max_k + 1 > n {
        return Err(Error::KTooLarge { k: max_k, n });
    }
    let sims = gram(gallery.vectors());
    let labels = gallery.labels();

    // Rank (0-based) of the first same-class neighbor for every query.
    let first_hit: Vec<Option<usize>> = (0..n)
        .map(|q| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != q).collect();
            order.sort_by(|&a, &b| {
                sims[[q, b]]
                    .partial_cmp(&sims[[q, a]])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order.iter().position(|&j| labels[j] == labels[q])
        })
        .collect();

    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit
                .iter()
                .filter(|r| matches!(r, Some(rank) if *rank < k))
                .count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}
