//! Flat TOML run configuration. Every key is required and unknown keys are
//! rejected; `obdsd init-config` prints a complete file with the defaults.

use std::path::{Path, PathBuf};

use obdsd::diffusion::SolverMode;
use obdsd::metrics::{DensityDistance, EvalConfig};
use obdsd::trainer::{DistillMethod, Manifold, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Synthetic zero-shot dataset.
    pub num_train_classes: usize,
    pub num_test_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub label_flip_ratio: f64,

    // Encoder and optimizer (plain gradient descent).
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,

    // Distillation.
    pub method: DistillMethod,
    pub tau: f64,
    pub lambda: f64,
    pub dynamic_weight: bool,

    // Diffusion.
    pub omega: f64,
    pub solver: SolverMode,
    pub manifold: Manifold,
    pub knn_k: usize,
    pub diffusion_max_iter: usize,
    pub diffusion_tol: f64,
    pub degree_epsilon: f64,

    // Evaluation.
    pub recall_ks: Vec<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub density_distance: DensityDistance,
    pub exclude_top: usize,
    pub eval_every: usize,

    // Runs and outputs.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            num_train_classes: t.num_train_classes,
            num_test_classes: t.num_test_classes,
            samples_per_class: t.samples_per_class,
            input_dim: t.input_dim,
            cluster_spread: t.cluster_spread,
            label_flip_ratio: t.label_flip_ratio,
            hidden_dim: t.hidden_dim,
            embed_dim: t.embed_dim,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            margin: t.margin,
            method: t.method,
            tau: t.tau,
            lambda: t.lambda,
            dynamic_weight: t.dynamic_weight,
            omega: t.omega,
            solver: t.solver,
            manifold: t.manifold,
            knn_k: t.knn_k,
            diffusion_max_iter: t.diffusion_max_iter,
            diffusion_tol: t.diffusion_tol,
            degree_epsilon: t.degree_epsilon,
            recall_ks: t.eval.recall_ks,
            kmeans_restarts: t.eval.kmeans_restarts,
            kmeans_max_iter: t.eval.kmeans_max_iter,
            density_distance: t.eval.density_distance,
            exclude_top: t.eval.exclude_top,
            eval_every: t.eval_every,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Trainer configuration for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            num_train_classes: self.num_train_classes,
            num_test_classes: self.num_test_classes,
            samples_per_class: self.samples_per_class,
            input_dim: self.input_dim,
            cluster_spread: self.cluster_spread,
            label_flip_ratio: self.label_flip_ratio,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            margin: self.margin,
            method: self.method,
            tau: self.tau,
            lambda: self.lambda,
            dynamic_weight: self.dynamic_weight,
            omega: self.omega,
            solver: self.solver,
            manifold: self.manifold,
            knn_k: self.knn_k,
            diffusion_max_iter: self.diffusion_max_iter,
            diffusion_tol: self.diffusion_tol,
            degree_epsilon: self.degree_epsilon,
            eval: EvalConfig {
                recall_ks: self.recall_ks.clone(),
                kmeans_restarts: self.kmeans_restarts,
                kmeans_max_iter: self.kmeans_max_iter,
                density_distance: self.density_distance,
                exclude_top: self.exclude_top,
                seed,
            },
            eval_every: self.eval_every,
            seed,
        }
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Validation("seeds must not be empty".into()));
        }
        if self.recall_ks.is_empty() || self.recall_ks.contains(&0) {
            return Err(CliError::Validation(
                "recall_ks must be nonempty positive integers".into(),
            ));
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 {
            return Err(CliError::Validation(
                "kmeans_restarts and kmeans_max_iter must be positive".into(),
            ));
        }
        if self.embed_dim <= self.exclude_top {
            return Err(CliError::Validation(format!(
                "embed_dim {} must exceed exclude_top {}",
                self.embed_dim, self.exclude_top
            )));
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return Err(CliError::Validation("seeds must be distinct".into()));
        }
        self.train_config(self.seeds[0])
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded. `out_dir` is left
    /// out: it names where results go, not what they are.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("struct").remove("out_dir");
        hash_json(&value)
    }
}

/// SHA-256 of `value`'s JSON serialization (struct fields in declaration
/// order, so the encoding is canonical for a given type).
pub fn hash_json<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_field_is_named() {
        let text = RunConfig::default().to_toml().replace("epochs = 60\n", "");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = format!("{}bogus = 1\n", RunConfig::default().to_toml());
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            omega: 0.5,
            ..a.clone()
        };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = RunConfig {
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), moved.hash());
    }
}
