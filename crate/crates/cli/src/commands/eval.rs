use std::path::PathBuf;

use clap::Args;
use obdsd::metrics::{evaluate, DensityDistance, EvalConfig, MetricsReport};
use serde::Serialize;

use super::{file_digest, normalized, parse_enum};
use crate::config::hash_json;
use crate::error::CliResult;
use crate::io::{read_embeddings, write_json};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Embedding file (CSV or binary).
    pub input: PathBuf,

    /// Recall cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
    pub ks: Vec<usize>,

    #[arg(long, default_value_t = 10)]
    pub kmeans_restarts: usize,

    #[arg(long, default_value_t = 300)]
    pub kmeans_max_iter: usize,

    /// euclidean, cosine_distance, or cosine_similarity.
    #[arg(long, default_value = "euclidean", value_parser = parse_enum::<DensityDistance>)]
    pub density_distance: DensityDistance,

    /// Largest singular values excluded from the spectral decay.
    #[arg(long, default_value_t = 2)]
    pub exclude_top: usize,
}

#[derive(Serialize)]
struct EvalIdentity<'a> {
    command: &'static str,
    input_sha256: &'a str,
    config: &'a EvalConfig,
}

impl EvalArgs {
    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            recall_ks: self.ks.clone(),
            kmeans_restarts: self.kmeans_restarts,
            kmeans_max_iter: self.kmeans_max_iter,
            density_distance: self.density_distance,
            exclude_top: self.exclude_top,
            seed,
        }
    }
}

/// Report for `args` without touching the output directory.
pub fn report(args: &EvalArgs, seed: u64) -> CliResult<MetricsReport> {
    let file = read_embeddings(&args.input)?;
    let config = args.eval_config(seed);
    let mut report = evaluate(&normalized(&file)?, &config)?;
    let digest = file_digest(&args.input)?;
    let hash = hash_json(&EvalIdentity {
        command: "eval",
        input_sha256: &digest,
        config: &config,
    });
    report.meta.extra.insert("config_hash".into(), hash);
    Ok(report)
}

pub fn run(args: EvalArgs, seed: u64, out_dir: PathBuf) -> CliResult<()> {
    let report = report(&args, seed)?;
    write_json(&out_dir.join("metrics.json"), &report)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}
