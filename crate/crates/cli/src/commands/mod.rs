mod diffuse;
mod eval;
mod gradcheck;
mod sweep;
mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use obdsd::embedding::{l2_normalize, EmbeddingBatch, RawEmbeddingBatch};
use serde::de::DeserializeOwned;

pub use diffuse::{refine, DiffuseArgs, DiffuseMode};
pub use eval::{report, EvalArgs};
pub use gradcheck::{
    numeric_gradient, relative_error, run_suite, FailureInstance, GradcheckArgs, GradcheckReport, GradcheckThresholds,
};
pub use sweep::{SweepArgs, SweepParam};
pub use train::{run_seed, summarize, Aggregate, SeedResult, TrainArgs, TrainSummary, OPTIMIZER};

use crate::error::{CliError, CliResult};
use crate::io::EmbeddingFile;

#[derive(Debug, Parser)]
#[command(name = "obdsd", version, about = "Online batch diffusion self-distillation toolkit")]
pub struct Cli {
    /// Random seed; overrides the seed list of a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for artifacts; overrides `out_dir` of a config file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the synthetic zero-shot task for every configured seed.
    Train(TrainArgs),
    /// Refine the cosine similarities of an embedding file by diffusion.
    Diffuse(DiffuseArgs),
    /// Compute Recall@K, NMI, density ratio, and spectral decay.
    Eval(EvalArgs),
    /// Finite-difference checks of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Train once per value of omega or lambda.
    Sweep(SweepArgs),
    /// Print a complete config file with default values.
    InitConfig,
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    let out_dir = cli.out_dir;
    match cli.command {
        Command::Train(args) => train::run(args, cli.seed, out_dir),
        Command::Diffuse(args) => diffuse::run(args, out_dir.unwrap_or_else(|| PathBuf::from("."))),
        Command::Eval(args) => eval::run(
            args,
            cli.seed.unwrap_or(0),
            out_dir.unwrap_or_else(|| PathBuf::from(".")),
        ),
        Command::Gradcheck(args) => gradcheck::run(
            args,
            cli.seed.unwrap_or(0),
            out_dir.unwrap_or_else(|| PathBuf::from(".")),
        ),
        Command::Sweep(args) => sweep::run(args, cli.seed, out_dir),
        Command::InitConfig => {
            print!("{}", crate::config::RunConfig::default().to_toml());
            Ok(())
        }
    }
}

/// Parses a snake_case enum name through its serde representation.
pub(crate) fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Unit-normalized rows of an embedding file.
pub fn normalized(file: &EmbeddingFile) -> CliResult<EmbeddingBatch<f64>> {
    let raw = RawEmbeddingBatch::new(file.vectors.clone(), file.labels.clone())?;
    Ok(l2_normalize(&raw)?)
}

/// SHA-256 of a file's bytes, for recording inputs in artifact hashes.
pub(crate) fn file_digest(path: &std::path::Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
