use std::io::Write;
use std::path::{Path, PathBuf};

use abcde_cli::pipeline;
use abcde_cli::run::{to_json, to_jsonl, write_atomic, RunDir};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abcde", version, about = "Evaluate the difference between two clusterings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Dataset file (.jsonl, or .tsv without attributes). Defaults to the
    /// dataset recorded in the run.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Run directory that receives the artifacts.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Also write the primary output to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Sampling {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of unique elements to sample.
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Exact impact metrics and the most affected clusters.
    Impact(Input),
    /// Importance sample of affected items for exploration.
    SampleItems(Sampling),
    /// Weighted sample of item pairs for judgement.
    SamplePairs(Sampling),
    /// Draw judgement tasks from the pair sample until the budget is filled.
    ExportTasks {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add verdicts from a JSONL file to the run's judgement log.
    ImportJudgements {
        #[arg(long)]
        run: PathBuf,
        file: PathBuf,
    },
    /// Quality estimates from the judged pairs.
    Quality {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API for a run.
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// Writes `bytes` to `out` when given, and to stdout when there is no other
/// destination.
fn emit(bytes: &[u8], out: Option<&Path>, has_run: bool) -> Result<()> {
    if let Some(path) = out {
        write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    if out.is_none() && !has_run {
        std::io::stdout().write_all(bytes)?;
    }
    Ok(())
}

fn open_run(path: Option<&Path>) -> Result<Option<RunDir>> {
    path.map(RunDir::open_or_create)
        .transpose()
        .context("opening run directory")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Impact(input) => {
            let run = open_run(input.run.as_deref())?;
            let ds = pipeline::resolve_dataset(run.as_ref(), input.dataset.as_deref())?;
            let report = pipeline::run_impact(run.as_ref(), &ds)?;
            emit(&to_json(&report)?, input.out.as_deref(), false)?;
        }
        Command::SampleItems(s) => {
            let run = open_run(s.input.run.as_deref())?;
            let ds = pipeline::resolve_dataset(run.as_ref(), s.input.dataset.as_deref())?;
            let sample = pipeline::run_sample_items(run.as_ref(), &ds, s.n, s.seed)?;
            emit(&to_jsonl(&sample.items)?, s.input.out.as_deref(), run.is_some())?;
            eprintln!(
                "sampled {} unique items (population exhausted: {})",
                sample.items.len(),
                sample.population_exhausted
            );
        }
        Command::SamplePairs(s) => {
            let run = open_run(s.input.run.as_deref())?;
            let ds = pipeline::resolve_dataset(run.as_ref(), s.input.dataset.as_deref())?;
            let sample = pipeline::run_sample_pairs(run.as_ref(), &ds, s.n, s.seed)?;
            emit(&to_jsonl(&sample.pairs)?, s.input.out.as_deref(), run.is_some())?;
            eprintln!(
                "sampled {} unique pairs (population exhausted: {})",
                sample.pairs.len(),
                sample.population_exhausted
            );
        }
        Command::ExportTasks { run, budget, out } => {
            let run = RunDir::open(run)?;
            let export = pipeline::run_export_tasks(&run, budget)?;
            emit(&to_jsonl(&export.tasks)?, out.as_deref(), true)?;
            eprintln!(
                "exported {} tasks from {} drawn pairs",
                export.tasks.len(),
                export.pairs.len()
            );
        }
        Command::ImportJudgements { run, file } => {
            let run = RunDir::open(run)?;
            let summary = pipeline::run_import_judgements(&run, &file)?;
            if !summary.unknown_tasks.is_empty() {
                eprintln!(
                    "warning: skipped {} verdicts for unknown tasks",
                    summary.unknown_tasks.len()
                );
            }
            emit(&to_json(&summary)?, None, false)?;
        }
        Command::Quality { run, out } => {
            let run = RunDir::open(run)?;
            let report = pipeline::run_quality(&run)?;
            emit(&to_json(&report)?, out.as_deref(), false)?;
        }
        Command::Serve { run, port } => {
            let run = RunDir::open(run)?;
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://127.0.0.1:{port}");
            rt.block_on(abcde_cli::server::serve(run, port))?;
        }
    }
    Ok(())
}
