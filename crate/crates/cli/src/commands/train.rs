use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use obdsd::metrics::MetricsReport;
use obdsd::trainer::{EpochRecord, TrainOutcome, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{embedding_csv, fmt_f64, write_atomic, write_json, CsvBuilder, EmbeddingFile};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// TOML run configuration (see `obdsd init-config`).
    #[arg(long)]
    pub config: PathBuf,
}

/// Optimizer recorded in run metadata.
pub const OPTIMIZER: &str = "gradient_descent";

#[derive(Debug, Serialize)]
struct RunMeta<'a> {
    config_hash: &'a str,
    library_version: &'static str,
    cli_version: &'static str,
    optimizer: &'static str,
    batches_per_epoch: usize,
    config: &'a RunConfig,
}

/// Mean or standard deviation of final metrics over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub recall: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub density_ratio: Option<f64>,
    pub spectral_decay: Option<f64>,
    pub train_density_ratio: Option<f64>,
    pub train_spectral_decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test: MetricsReport,
    pub train: MetricsReport,
    pub diffusion_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedResult>,
    pub mean: Aggregate,
    /// Sample standard deviation (zero for a single seed).
    pub std: Aggregate,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn mean_std_opt(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let all: Option<Vec<f64>> = values.iter().copied().collect();
    match all {
        Some(v) => {
            let (m, s) = mean_std(&v);
            (Some(m), Some(s))
        }
        None => (None, None),
    }
}

/// Seed mean and sample standard deviation of the final metrics.
pub fn summarize(config_hash: &str, runs: Vec<SeedResult>) -> TrainSummary {
    let pick = |f: &dyn Fn(&SeedResult) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
    let pick_opt = |f: &dyn Fn(&SeedResult) -> Option<f64>| mean_std_opt(&runs.iter().map(f).collect::<Vec<_>>());
    let (mut recall_mean, mut recall_std) = (BTreeMap::new(), BTreeMap::new());
    if let Some(first) = runs.first() {
        for &k in first.test.recall.keys() {
            let (m, s) = pick(&|r| r.test.recall[&k]);
            recall_mean.insert(k, m);
            recall_std.insert(k, s);
        }
    }
    let nmi = pick(&|r| r.test.nmi);
    let density = pick_opt(&|r| r.test.density_ratio);
    let decay = pick_opt(&|r| r.test.spectral_decay);
    let train_density = pick_opt(&|r| r.train.density_ratio);
    let train_decay = pick_opt(&|r| r.train.spectral_decay);
    TrainSummary {
        config_hash: config_hash.to_string(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        mean: Aggregate {
            recall: recall_mean,
            nmi: nmi.0,
            density_ratio: density.0,
            spectral_decay: decay.0,
            train_density_ratio: train_density.0,
            train_spectral_decay: train_decay.0,
        },
        std: Aggregate {
            recall: recall_std,
            nmi: nmi.1,
            density_ratio: density.1,
            spectral_decay: decay.1,
            train_density_ratio: train_density.1,
            train_spectral_decay: train_decay.1,
        },
        runs,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn history_csv(history: &[EpochRecord], ks: &[usize], hash: &str) -> CsvBuilder {
    let mut header: Vec<String> = [
        "epoch",
        "distill_weight",
        "mean_dml_loss",
        "mean_distill_loss",
        "diffusion_seconds",
        "degenerate_batches",
    ]
    .map(String::from)
    .to_vec();
    header.extend(ks.iter().map(|k| format!("test_recall_at_{k}")));
    header.extend(
        [
            "test_nmi",
            "test_density_ratio",
            "test_spectral_decay",
            "train_density_ratio",
            "train_spectral_decay",
        ]
        .map(String::from),
    );
    let mut csv = CsvBuilder::new(hash, &header);
    for rec in history {
        let mut row = vec![
            rec.epoch.to_string(),
            fmt_f64(rec.distill_weight),
            fmt_f64(rec.mean_dml_loss),
            fmt_f64(rec.mean_distill_loss),
            fmt_f64(rec.diffusion_seconds),
            rec.degenerate_batches.to_string(),
        ];
        row.extend(ks.iter().map(|k| opt(rec.test.as_ref().and_then(|t| t.recall_at(*k)))));
        row.push(opt(rec.test.as_ref().map(|t| t.nmi)));
        row.push(opt(rec.test.as_ref().and_then(|t| t.density_ratio)));
        row.push(opt(rec.test.as_ref().and_then(|t| t.spectral_decay)));
        row.push(opt(rec.train.as_ref().and_then(|t| t.density_ratio)));
        row.push(opt(rec.train.as_ref().and_then(|t| t.spectral_decay)));
        csv.row(row);
    }
    csv
}

#[derive(Serialize)]
struct HistoryJson<'a> {
    config_hash: &'a str,
    seed: u64,
    history: &'a [EpochRecord],
}

/// Trains one seed and writes its artifacts under `dir`.
pub fn run_seed(config: &RunConfig, seed: u64, hash: &str, dir: &Path) -> CliResult<SeedResult> {
    let outcome: TrainOutcome = Trainer::new(config.train_config(seed))?.finish()?;
    let last = outcome.history.last().expect("at least one epoch");
    let (test, train) = match (&last.test, &last.train) {
        (Some(t), Some(r)) => (t.clone(), r.clone()),
        _ => unreachable!("the final epoch is always evaluated"),
    };

    history_csv(&outcome.history, &config.recall_ks, hash).write(&dir.join("history.csv"))?;
    write_json(
        &dir.join("history.json"),
        &HistoryJson {
            config_hash: hash,
            seed,
            history: &outcome.history,
        },
    )?;
    for (name, batch) in [("train", &outcome.train_embeddings), ("test", &outcome.test_embeddings)] {
        let file = EmbeddingFile::new(batch.vectors().to_owned(), batch.labels().to_vec(), &format!("{name}-"));
        write_atomic(&dir.join(format!("embeddings_{name}.csv")), &embedding_csv(&file, hash))?;
    }
    let mut params = serde_json::to_value(&outcome.student).expect("params serialize");
    params["config_hash"] = serde_json::Value::String(hash.to_string());
    write_json(&dir.join("encoder.json"), &params)?;

    Ok(SeedResult {
        seed,
        test,
        train,
        diffusion_seconds: outcome.history.iter().map(|h| h.diffusion_seconds).sum(),
    })
}

/// Loads and validates a config, applying the universal flag overrides.
pub(crate) fn load_config(path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.seeds = vec![seed];
    }
    if let Some(dir) = out_dir {
        config.out_dir = dir;
    }
    config.validate()?;
    Ok(config)
}

pub fn write_run_meta(config: &RunConfig, hash: &str) -> CliResult<()> {
    write_json(
        &config.out_dir.join("run_meta.json"),
        &RunMeta {
            config_hash: hash,
            library_version: obdsd::VERSION,
            cli_version: env!("CARGO_PKG_VERSION"),
            optimizer: OPTIMIZER,
            batches_per_epoch: config.train_config(config.seeds[0]).batches_per_epoch(),
            config,
        },
    )
}

pub fn run(args: TrainArgs, seed: Option<u64>, out_dir: Option<PathBuf>) -> CliResult<()> {
    let config = load_config(&args.config, seed, out_dir)?;
    let hash = config.hash();
    write_run_meta(&config, &hash)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let dir = config.out_dir.join(format!("seed_{seed}"));
        runs.push(run_seed(&config, seed, &hash, &dir)?);
    }
    let summary = summarize(&hash, runs);
    write_json(&config.out_dir.join("summary.json"), &summary)?;
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "config_hash": hash,
            "out_dir": config.out_dir,
            "mean": summary.mean,
            "std": summary.std,
        }))
        .map_err(|e| CliError::Validation(e.to_string()))?
    );
    Ok(())
}
