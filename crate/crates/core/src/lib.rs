//! Online batch diffusion self-distillation for deep metric learning.
//!
//! The numerical core (normalization, similarity, diffusion, distillation
//! losses and gradients, metrics) is generic over [`Real`], implemented for
//! `f32` and `f64`. The toy training loop in [`trainer`] runs in `f64`.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod distill;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod trainer;

pub use diffusion::{
    affinity_from_similarity, build_affinity_batch, build_affinity_knn, diffuse, diffuse_closed_form,
    diffuse_iterative, obdp_objective, refine_batch, refine_global, refine_in_batches, top_k_neighbors,
    transition_matrix, AffinityClamp, AffinityGraph, BatchRefinement, DiffusionParams, IterativeDiffusion,
    RefinedSimilarity, SolverMode, TransitionMatrix,
};
pub use distill::{
    anchor_contribution, attention_factor, dynamic_weight, obdsd_loss, psd_grad, psd_loss, psd_loss_and_grad,
    row_softmax, DistillConfig, SoftTarget,
};
pub use embedding::{
    cosine_similarity_matrix, l2_normalize, l2_normalize_with_threshold, normalization_jacobian_apply, EmbeddingBatch,
    RawEmbeddingBatch, SimilarityMatrix, ZERO_NORM_THRESHOLD,
};
pub use error::{Error, Result};
pub use metrics::{evaluate, EvalConfig, MetricsReport};
pub use scalar::Real;

/// Version of this library, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type RawEmbeddingBatch64 = RawEmbeddingBatch<f64>;
pub type EmbeddingBatch64 = EmbeddingBatch<f64>;
pub type SimilarityMatrix64 = SimilarityMatrix<f64>;
pub type RefinedSimilarity64 = RefinedSimilarity<f64>;
pub type DiffusionParams64 = DiffusionParams<f64>;
pub type DistillConfig64 = DistillConfig<f64>;

pub type RawEmbeddingBatch32 = RawEmbeddingBatch<f32>;
pub type EmbeddingBatch32 = EmbeddingBatch<f32>;
pub type SimilarityMatrix32 = SimilarityMatrix<f32>;
pub type RefinedSimilarity32 = RefinedSimilarity<f32>;
pub type DiffusionParams32 = DiffusionParams<f32>;
pub type DistillConfig32 = DistillConfig<f32>;
