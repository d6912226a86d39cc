//! Toy-scale self-distillation training: a small encoder trained with a
//! contrastive baseline plus a progressively weighted distillation term
//! whose targets come from the previous epoch's frozen snapshot, optionally
//! refined by diffusion on the batch (or global) manifold.

mod contrastive;
mod data;
mod encoder;

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use contrastive::contrastive_loss_and_grad;
pub use data::{
    flip_labels, generate_synthetic, sample_batch, zero_shot_split, LabeledDataset, SyntheticDatasetSpec, ZeroShotSplit,
};
pub use encoder::{Dense, EncoderParams, ForwardCache};

use crate::diffusion::{refine_batch, refine_global, DiffusionParams, SolverMode};
use crate::distill::{dynamic_weight, psd_loss, psd_loss_and_grad, row_softmax, DistillConfig, SoftTarget};
use crate::embedding::{cosine_similarity_matrix, l2_normalize, EmbeddingBatch, RawEmbeddingBatch};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig, MetricsReport};

/// Which distillation term is added to the metric-learning loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMethod {
    /// Metric-learning loss only.
    Baseline,
    /// Teacher cosine similarities as targets.
    Psd,
    /// Diffusion-refined teacher similarities as targets.
    Obdsd,
}

/// Where OBD-SD targets are diffused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    /// Online, on each mini-batch's own affinity graph.
    Batch,
    /// Offline, once per epoch on a mutual-kNN graph over the training set.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_train_classes: usize,
    pub num_test_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub label_flip_ratio: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub method: DistillMethod,
    pub tau: f64,
    pub lambda: f64,
    pub dynamic_weight: bool,
    pub omega: f64,
    pub solver: SolverMode,
    pub manifold: Manifold,
    pub knn_k: usize,
    pub diffusion_max_iter: usize,
    pub diffusion_tol: f64,
    pub degree_epsilon: f64,
    pub eval: EvalConfig,
    /// Evaluate every this many epochs; 0 evaluates only after the last one.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_train_classes: 16,
            num_test_classes: 16,
            samples_per_class: 20,
            input_dim: 16,
            cluster_spread: 0.25,
            label_flip_ratio: 0.0,
            hidden_dim: 32,
            embed_dim: 16,
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.5,
            margin: 0.2,
            method: DistillMethod::Obdsd,
            tau: 1.0,
            lambda: 1.0,
            dynamic_weight: true,
            omega: 0.9,
            solver: SolverMode::ClosedForm,
            manifold: Manifold::Batch,
            knn_k: 20,
            diffusion_max_iter: 500,
            diffusion_tol: 1e-10,
            degree_epsilon: 1e-8,
            eval: EvalConfig::default(),
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn dataset_spec(&self) -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            num_classes: self.num_train_classes + self.num_test_classes,
            samples_per_class: self.samples_per_class,
            input_dim: self.input_dim,
            cluster_spread: self.cluster_spread,
            seed: self.seed,
            label_flip_ratio: self.label_flip_ratio,
        }
    }

    pub fn diffusion_params(&self) -> Result<DiffusionParams<f64>> {
        let mut p = DiffusionParams::new(self.omega)?.with_mode(self.solver);
        p.max_iter = self.diffusion_max_iter;
        p.tol = self.diffusion_tol;
        p.degree_epsilon = self.degree_epsilon;
        p.validate()?;
        Ok(p)
    }

    pub fn distill_config(&self, epoch: usize) -> DistillConfig<f64> {
        DistillConfig {
            tau: self.tau,
            lambda: self.lambda,
            epoch,
            total_epochs: self.epochs,
            dynamic: self.dynamic_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        if self.num_train_classes < 2 || self.num_test_classes < 2 {
            return Err(Error::InvalidParameter(
                "need at least two train and two test classes".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidParameter("embed_dim must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be positive".into()));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "batch_size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.batch_size / 2 > self.num_train_classes {
            return Err(Error::InsufficientClasses {
                needed: self.batch_size / 2,
                available: self.num_train_classes,
            });
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(
                "learning_rate must be finite and nonnegative".into(),
            ));
        }
        if !self.margin.is_finite() {
            return Err(Error::InvalidParameter("margin must be finite".into()));
        }
        self.distill_config(0).validate()?;
        self.diffusion_params()?;
        if self.method == DistillMethod::Obdsd && self.manifold == Manifold::Global {
            let n = self.num_train_classes * self.samples_per_class;
            if self.knn_k == 0 || self.knn_k >= n {
                return Err(Error::InvalidParameter(format!(
                    "knn_k must satisfy 1 <= k < {n} (training set size), got {}",
                    self.knn_k
                )));
            }
        }
        if self
            .eval
            .recall_ks
            .iter()
            .any(|&k| k + 1 > self.num_test_classes * self.samples_per_class)
        {
            return Err(Error::InvalidParameter("recall cutoff exceeds test set size".into()));
        }
        Ok(())
    }

    /// Mini-batches per epoch: enough to visit each training sample once in
    /// expectation.
    pub fn batches_per_epoch(&self) -> usize {
        let n = self.num_train_classes * self.samples_per_class;
        n.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub distill_weight: f64,
    pub mean_dml_loss: f64,
    pub mean_distill_loss: f64,
    /// Wall time spent building targets by diffusion (zero unless OBD-SD).
    pub diffusion_seconds: f64,
    /// Batches whose affinity graph had floored degrees.
    pub degenerate_batches: usize,
    /// Metrics on the unseen test classes.
    pub test: Option<MetricsReport>,
    /// Embedding-space metrics on the training classes.
    pub train: Option<MetricsReport>,
}

/// Mutable state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: EncoderParams,
    /// Frozen copy of the student as of the end of the previous epoch.
    pub teacher: EncoderParams,
    /// Next epoch to run (0-based).
    pub epoch: usize,
    rng: ChaCha8Rng,
}

/// Distillation targets for one batch.
#[derive(Debug, Clone)]
pub struct BatchTarget {
    pub soft: SoftTarget<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: EncoderParams,
    pub history: Vec<EpochRecord>,
    pub train_embeddings: EmbeddingBatch<f64>,
    pub test_embeddings: EmbeddingBatch<f64>,
}

pub struct Trainer {
    config: TrainConfig,
    diffusion: DiffusionParams<f64>,
    split: ZeroShotSplit,
    state: TrainState,
    history: Vec<EpochRecord>,
}

/// Normalized embeddings of `data` under `params`.
pub fn embed(params: &EncoderParams, data: &LabeledDataset) -> Result<EmbeddingBatch<f64>> {
    let raw = RawEmbeddingBatch::new(params.forward(data.inputs.view()), data.labels.clone())?;
    l2_normalize(&raw)
}

/// Combined objective `L_DML + weight·L_distill` on one batch (value only).
pub fn batch_objective(
    params: &EncoderParams,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    target: Option<&BatchTarget>,
    config: &TrainConfig,
) -> Result<f64> {
    let raw = RawEmbeddingBatch::new(params.forward(inputs), labels.to_vec())?;
    let (dml, _) = contrastive_loss_and_grad(&raw, config.margin)?;
    let Some(target) = target else { return Ok(dml) };
    let student = cosine_similarity_matrix(&l2_normalize(&raw)?);
    // psd_loss takes logits; feed log-probabilities so the softmax reproduces them.
    let logits = target.soft.view().mapv(|p| p.ln() * config.tau);
    Ok(dml + target.weight * psd_loss(logits.view(), &student, config.tau)?)
}

/// Value and parameter gradient of the combined objective on one batch.
pub fn batch_loss_and_grad(
    params: &EncoderParams,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    target: Option<&BatchTarget>,
    config: &TrainConfig,
) -> Result<(f64, f64, EncoderParams)> {
    let (v, cache) = params.forward_cached(inputs);
    let raw = RawEmbeddingBatch::new(v, labels.to_vec())?;
    let (dml, mut grad_v) = contrastive_loss_and_grad(&raw, config.margin)?;
    let mut distill = 0.0;
    if let Some(target) = target {
        let (loss, g) = psd_loss_and_grad(&raw, &target.soft, config.tau)?;
        distill = loss;
        grad_v.scaled_add(target.weight, &g);
    }
    Ok((dml, distill, params.backward(inputs, &cache, grad_v.view())))
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let diffusion = config.diffusion_params()?;
        let split = zero_shot_split(&config.dataset_spec(), config.num_train_classes)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_rng.set_stream(1);
        let student = EncoderParams::init(config.input_dim, config.hidden_dim, config.embed_dim, &mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2);
        Ok(Self {
            diffusion,
            split,
            state: TrainState {
                teacher: student.clone(),
                student,
                epoch: 0,
                rng,
            },
            history: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn split(&self) -> &ZeroShotSplit {
        &self.split
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    /// Distillation weight for the upcoming epoch.
    pub fn current_weight(&self) -> Result<f64> {
        if self.config.method == DistillMethod::Baseline {
            return Ok(0.0);
        }
        dynamic_weight(&self.config.distill_config(self.state.epoch))
    }

    /// Targets for the given training rows, using the current teacher.
    /// `global` holds the epoch's offline-refined matrix in global mode.
    fn batch_target(
        &self,
        rows: &[usize],
        weight: f64,
        global: Option<&Array2<f64>>,
        degenerate: &mut usize,
    ) -> Result<Option<BatchTarget>> {
        if weight == 0.0 || self.config.method == DistillMethod::Baseline {
            return Ok(None);
        }
        let logits = if let Some(global) = global {
            Array2::from_shape_fn((rows.len(), rows.len()), |(i, j)| global[[rows[i], rows[j]]])
        } else {
            let teacher = embed(&self.state.teacher, &self.split.train.select(rows))?;
            match self.config.method {
                DistillMethod::Psd => cosine_similarity_matrix(&teacher).into_inner(),
                _ => {
                    let refined = refine_batch(&teacher, &self.diffusion)?;
                    if !refined.degenerate_nodes.is_empty() {
                        *degenerate += 1;
                    }
                    refined.refined.into_inner()
                }
            }
        };
        Ok(Some(BatchTarget {
            soft: row_softmax(logits.view(), self.config.tau)?,
            weight,
        }))
    }

    /// Batch-mode target for arbitrary training rows under the current
    /// teacher; exposed for gradient checks of the combined objective.
    pub fn target_for(&self, rows: &[usize], weight: f64) -> Result<Option<BatchTarget>> {
        let mut ignored = 0;
        self.batch_target(rows, weight, None, &mut ignored)
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        if self.is_finished() {
            return Err(Error::InvalidParameter("all epochs already run".into()));
        }
        let epoch = self.state.epoch;
        let weight = self.current_weight()?;
        let distilling = weight > 0.0 && self.config.method != DistillMethod::Baseline;
        let mut diffusion_seconds = 0.0;
        let mut degenerate_batches = 0;

        let global =
            if distilling && self.config.method == DistillMethod::Obdsd && self.config.manifold == Manifold::Global {
                let started = Instant::now();
                let teacher = embed(&self.state.teacher, &self.split.train)?;
                let refined = refine_global(&teacher, self.config.knn_k, &self.diffusion)?;
                diffusion_seconds += started.elapsed().as_secs_f64();
                if !refined.degenerate_nodes.is_empty() {
                    degenerate_batches += 1;
                }
                Some(refined.refined.into_inner())
            } else {
                None
            };

        let batches = self.config.batches_per_epoch();
        let (mut dml_sum, mut distill_sum) = (0.0, 0.0);
        for _ in 0..batches {
            let rows = sample_batch(&self.split.train.labels, self.config.batch_size, &mut self.state.rng)?;
            let started = Instant::now();
            let target = self.batch_target(&rows, weight, global.as_ref(), &mut degenerate_batches)?;
            if distilling && self.config.method == DistillMethod::Obdsd && global.is_none() {
                diffusion_seconds += started.elapsed().as_secs_f64();
            }
            let batch = self.split.train.select(&rows);
            let (dml, distill, grad) = batch_loss_and_grad(
                &self.state.student,
                batch.inputs.view(),
                &batch.labels,
                target.as_ref(),
                &self.config,
            )?;
            dml_sum += dml;
            distill_sum += distill;
            self.state.student.descend(&grad, self.config.learning_rate);
        }
        if !self.state.student.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "parameters diverged at epoch {epoch}; lower learning_rate or lambda"
            )));
        }
        self.state.teacher = self.state.student.clone();
        self.state.epoch += 1;

        let last = self.state.epoch == self.config.epochs;
        let due = self.config.eval_every > 0 && self.state.epoch.is_multiple_of(self.config.eval_every);
        let (test, train) = if last || due {
            let mut eval = self.config.eval.clone();
            eval.seed = self.config.seed;
            let test = evaluate(&embed(&self.state.student, &self.split.test)?, &eval)?;
            let train = evaluate(&embed(&self.state.student, &self.split.train)?, &eval)?;
            (Some(test), Some(train))
        } else {
            (None, None)
        };

        self.history.push(EpochRecord {
            epoch,
            distill_weight: weight,
            mean_dml_loss: dml_sum / batches as f64,
            mean_distill_loss: distill_sum / batches as f64,
            diffusion_seconds,
            degenerate_batches,
            test,
            train,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn finish(mut self) -> Result<TrainOutcome> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(TrainOutcome {
            train_embeddings: embed(&self.state.student, &self.split.train)?,
            test_embeddings: embed(&self.state.student, &self.split.test)?,
            student: self.state.student,
            history: self.history,
        })
    }
}

/// Runs every epoch of `config` and returns the final student and history.
pub fn train(config: TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(config)?.finish()
}
