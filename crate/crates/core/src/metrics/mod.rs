//! Retrieval, clustering, and embedding-space diagnostics.

mod density;
mod kmeans;
mod nmi;
mod recall;
mod spectral;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use density::{embedding_density, Density, DensityDistance};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use nmi::nmi;
pub use recall::recall_at_k;
pub use spectral::{spectral_decay, DEFAULT_EXCLUDE_TOP};

use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub recall_ks: Vec<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub density_distance: DensityDistance,
    pub exclude_top: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            recall_ks: vec![1, 2, 4, 8],
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            density_distance: DensityDistance::Euclidean,
            exclude_top: DEFAULT_EXCLUDE_TOP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub kmeans_restarts: usize,
    pub density_distance: DensityDistance,
    pub exclude_top: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// Serialized as
/// `{"recall": {"1": r1, ...}, "nmi": x, "density_ratio": x, "spectral_decay": x, "meta": {...}}`.
///
/// `density_ratio` and `spectral_decay` are `null` when undefined for the
/// input (no class with two samples, fewer than two classes, or a rank
/// deficient spectrum); the reason is stored in `meta.extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub density_ratio: Option<f64>,
    pub spectral_decay: Option<f64>,
    pub meta: ReportMeta,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }
}

/// Runs the full suite: Recall@K, NMI of k-means with one cluster per class,
/// density ratio, and spectral decay.
pub fn evaluate<T: Real>(batch: &EmbeddingBatch<T>, config: &EvalConfig) -> Result<MetricsReport> {
    let recall = recall_at_k(batch, &config.recall_ks)?;
    let num_classes = batch.labels().iter().collect::<BTreeSet<_>>().len();
    let km = kmeans(
        batch.vectors(),
        &KMeansConfig {
            k: num_classes,
            restarts: config.kmeans_restarts,
            max_iter: config.kmeans_max_iter,
            seed: config.seed,
        },
    )?;
    let nmi = nmi(&km.assignments, batch.labels())?;
    let mut extra = BTreeMap::new();
    let density_ratio = match embedding_density(batch, config.density_distance) {
        Ok(d) => Some(d.ratio.as_f64()),
        Err(e @ Error::UndefinedDensity(_)) => {
            extra.insert("density_ratio".to_string(), e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let spectral_decay = match spectral_decay(batch, config.exclude_top) {
        Ok(v) => Some(v.as_f64()),
        Err(e @ Error::RankDeficient(_)) => {
            extra.insert("spectral_decay".to_string(), e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        recall,
        nmi,
        density_ratio,
        spectral_decay,
        meta: ReportMeta {
            seed: config.seed,
            n: batch.len(),
            d: batch.dim(),
            num_classes,
            kmeans_restarts: config.kmeans_restarts,
            density_distance: config.density_distance,
            exclude_top: config.exclude_top,
            extra,
        },
    })
}
