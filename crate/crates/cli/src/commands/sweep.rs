use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use super::train::{load_config, run_seed, summarize, write_run_meta};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, write_json, CsvBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Omega,
    Lambda,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Base TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,

    #[arg(long, value_enum)]
    pub param: SweepParam,

    /// Comma-separated values to try.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
}

impl SweepParam {
    pub fn apply(self, base: &RunConfig, value: f64) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            SweepParam::Omega => cfg.omega = value,
            SweepParam::Lambda => cfg.lambda = value,
        }
        cfg
    }

    fn name(self) -> &'static str {
        match self {
            SweepParam::Omega => "omega",
            SweepParam::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Serialize)]
struct RunFailure {
    value: f64,
    seed: u64,
    error: &'static str,
    message: String,
}

#[derive(Serialize)]
struct SweepIdentity<'a> {
    command: &'static str,
    param: SweepParam,
    values: &'a [f64],
    base: &'a RunConfig,
}

/// One row per value: `param,value,runs_ok,runs_failed,r1_mean,r1_std,nmi_mean,nmi_std`.
/// Per-value runs land in `<out_dir>/<param>_<value>/`. The table is
/// rewritten after every value so an interrupted sweep keeps what finished.
pub fn run(args: SweepArgs, seed: Option<u64>, out_dir: Option<PathBuf>) -> CliResult<()> {
    let base = load_config(&args.config, seed, out_dir)?;
    // Every value is validated before anything runs.
    let configs: Vec<RunConfig> = args
        .values
        .iter()
        .map(|&v| {
            let mut cfg = args.param.apply(&base, v);
            cfg.out_dir = base.out_dir.join(format!("{}_{}", args.param.name(), fmt_f64(v)));
            cfg.validate().map(|_| cfg)
        })
        .collect::<CliResult<_>>()?;

    let hash = crate::config::hash_json(&SweepIdentity {
        command: "sweep",
        param: args.param,
        values: &args.values,
        base: &base,
    });
    let header = [
        "param",
        "value",
        "runs_ok",
        "runs_failed",
        "r1_mean",
        "r1_std",
        "nmi_mean",
        "nmi_std",
    ]
    .map(String::from);
    let mut rows: Vec<[String; 8]> = Vec::new();
    let mut failures = Vec::new();
    let mut first_error: Option<CliError> = None;

    for (&value, cfg) in args.values.iter().zip(&configs) {
        let run_hash = cfg.hash();
        write_run_meta(cfg, &run_hash)?;
        let mut ok = Vec::new();
        for &s in &cfg.seeds {
            match run_seed(cfg, s, &run_hash, &cfg.out_dir.join(format!("seed_{s}"))) {
                Ok(r) => ok.push(r),
                Err(e) => {
                    failures.push(RunFailure {
                        value,
                        seed: s,
                        error: e.kind(),
                        message: e.to_string(),
                    });
                    first_error.get_or_insert(e);
                }
            }
        }
        let failed = cfg.seeds.len() - ok.len();
        let stats = if ok.is_empty() {
            [String::new(), String::new(), String::new(), String::new()]
        } else {
            let summary = summarize(&run_hash, ok.clone());
            write_json(&cfg.out_dir.join("summary.json"), &summary)?;
            let r1 = |a: &super::Aggregate| a.recall.get(&1).copied().map(fmt_f64).unwrap_or_default();
            [
                r1(&summary.mean),
                r1(&summary.std),
                fmt_f64(summary.mean.nmi),
                fmt_f64(summary.std.nmi),
            ]
        };
        let [a, b, c, d] = stats;
        rows.push([
            args.param.name().to_string(),
            fmt_f64(value),
            ok.len().to_string(),
            failed.to_string(),
            a,
            b,
            c,
            d,
        ]);

        let mut csv = CsvBuilder::new(&hash, &header);
        rows.iter().for_each(|r| csv.row(r));
        csv.write(&base.out_dir.join("sweep.csv"))?;
        if !failures.is_empty() {
            write_json(
                &base.out_dir.join("sweep_failures.json"),
                &serde_json::json!({ "config_hash": hash, "failures": failures }),
            )?;
        }
    }

    let mut csv = CsvBuilder::new(&hash, &header);
    rows.iter().for_each(|r| csv.row(r));
    print!("{}", String::from_utf8_lossy(&csv.finish()));
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
