use std::path::PathBuf;

use clap::{Args, ValueEnum};
use obdsd::diffusion::{refine_global, refine_in_batches, BatchRefinement, DiffusionParams, SolverMode};
use serde::Serialize;

use super::{file_digest, normalized, parse_enum};
use crate::config::hash_json;
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, read_embeddings, write_json, CsvBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffuseMode {
    /// Consecutive row batches, each refined on its own dense graph.
    Batch,
    /// One mutual-kNN graph over all rows.
    Global,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiffuseArgs {
    /// Embedding file (CSV or binary).
    #[serde(skip)]
    pub input: PathBuf,

    /// Random-walk continuation probability, in (0, 1).
    #[arg(long, default_value_t = 0.9)]
    pub omega: f64,

    #[arg(long, value_enum, default_value_t = DiffuseMode::Batch)]
    pub mode: DiffuseMode,

    /// Neighbors per node for the global mutual-kNN graph.
    #[arg(long, default_value_t = 10)]
    pub k: usize,

    /// Rows per batch in batch mode.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    /// closed_form or iterative.
    #[arg(long, default_value = "closed_form", value_parser = parse_enum::<SolverMode>)]
    pub solver: SolverMode,

    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,

    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,

    /// Also write the top-N re-ranked neighbors of every row.
    #[arg(long, default_value_t = 0)]
    pub neighbors: usize,
}

#[derive(Serialize)]
struct DiffuseIdentity<'a> {
    command: &'static str,
    input_sha256: &'a str,
    args: &'a DiffuseArgs,
}

#[derive(Debug, Serialize)]
struct BatchMeta {
    batch: usize,
    start: usize,
    end: usize,
    degenerate_nodes: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct DiffuseMeta<'a> {
    config_hash: &'a str,
    input: String,
    n: usize,
    d: usize,
    args: &'a DiffuseArgs,
    batches: Vec<BatchMeta>,
}

impl DiffuseArgs {
    pub fn params(&self) -> CliResult<DiffusionParams<f64>> {
        let mut p = DiffusionParams::new(self.omega)
            .map_err(|e| CliError::Validation(e.to_string()))?
            .with_mode(self.solver);
        p.max_iter = self.max_iter;
        p.tol = self.tol;
        p.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(p)
    }
}

/// Refined blocks for `args`, as the library computes them.
pub fn refine(args: &DiffuseArgs) -> CliResult<Vec<BatchRefinement<f64>>> {
    let params = args.params()?;
    let batch = normalized(&read_embeddings(&args.input)?)?;
    let blocks = match args.mode {
        DiffuseMode::Batch => refine_in_batches(&batch, args.batch_size, &params),
        DiffuseMode::Global => refine_global(&batch, args.k, &params).map(|b| vec![b]),
    };
    blocks.map_err(|e| match e {
        obdsd::Error::InvalidParameter(m) => CliError::Validation(m),
        other => other.into(),
    })
}

pub fn run(args: DiffuseArgs, out_dir: PathBuf) -> CliResult<()> {
    let file = read_embeddings(&args.input)?;
    let blocks = refine(&args)?;
    let digest = file_digest(&args.input)?;
    let hash = hash_json(&DiffuseIdentity {
        command: "diffuse",
        input_sha256: &digest,
        args: &args,
    });

    let header = ["batch", "i", "j", "similarity", "refined"].map(String::from);
    let mut refined_csv = CsvBuilder::new(&hash, &header);
    let header = ["batch", "row", "rank", "neighbor", "refined"].map(String::from);
    let mut neighbor_csv = CsvBuilder::new(&hash, &header);
    let mut batches = Vec::with_capacity(blocks.len());

    for (b, block) in blocks.iter().enumerate() {
        let rows = &block.rows;
        let sim = block.similarity.view();
        let a = block.refined.view();
        for (li, &gi) in rows.iter().enumerate() {
            for (lj, &gj) in rows.iter().enumerate() {
                refined_csv.row([
                    b.to_string(),
                    gi.to_string(),
                    gj.to_string(),
                    fmt_f64(sim[[li, lj]]),
                    fmt_f64(a[[li, lj]]),
                ]);
            }
            if args.neighbors > 0 {
                let mut order: Vec<usize> = (0..rows.len()).filter(|&lj| lj != li).collect();
                order.sort_by(|&x, &y| a[[li, y]].total_cmp(&a[[li, x]]).then(x.cmp(&y)));
                for (rank, &lj) in order.iter().take(args.neighbors).enumerate() {
                    neighbor_csv.row([
                        b.to_string(),
                        gi.to_string(),
                        (rank + 1).to_string(),
                        rows[lj].to_string(),
                        fmt_f64(a[[li, lj]]),
                    ]);
                }
            }
        }
        if !block.degenerate_nodes.is_empty() {
            let warning = serde_json::json!({
                "warning": "DegenerateGraph",
                "batch": b,
                "nodes": block.degenerate_nodes,
            });
            eprintln!("{warning}");
        }
        batches.push(BatchMeta {
            batch: b,
            start: rows[0],
            end: rows[rows.len() - 1] + 1,
            degenerate_nodes: block.degenerate_nodes.clone(),
        });
    }

    refined_csv.write(&out_dir.join("refined.csv"))?;
    if args.neighbors > 0 {
        neighbor_csv.write(&out_dir.join("neighbors.csv"))?;
    }
    write_json(
        &out_dir.join("diffuse_meta.json"),
        &DiffuseMeta {
            config_hash: &hash,
            input: args.input.display().to_string(),
            n: file.len(),
            d: file.dim(),
            args: &args,
            batches,
        },
    )
}
