//! The evaluation stages, each reading its inputs from and writing its
//! outputs to a run directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use abcde_core::impact::{impact_report, ImpactReport};
use abcde_core::model::{load_dataset, Dataset, InputFormat};
use abcde_core::pairs::{
    export_judgement_tasks, sample_pairs, CategoryTotals, JudgementTask,
    PairSample, SampledPair, TaskExport, WeightedPair,
};
use abcde_core::quality::{apply_judgements, quality_report, Judgement, QualityReport};
use abcde_core::sampler::{importance_sample_items, ClockedElement, ItemSample, SampledItem};
use abcde_core::PairKey;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::run::{hash_file, to_json, to_jsonl, RunDir, DATASET};

pub const IMPACT: &str = "impact.json";
pub const ITEM_SAMPLE: &str = "item_sample.jsonl";
pub const ITEM_CLOCKS: &str = "item_clocks.jsonl";
pub const ITEM_META: &str = "item_sample_meta.json";
pub const PAIR_SAMPLE: &str = "pair_sample.jsonl";
pub const PAIR_CLOCKS: &str = "pair_clocks.jsonl";
pub const PAIR_META: &str = "pair_sample_meta.json";
pub const TASKS: &str = "tasks.jsonl";
pub const TASK_PAIRS: &str = "task_pairs.jsonl";
pub const TASK_META: &str = "tasks_meta.json";
pub const JUDGEMENTS: &str = "judgements.jsonl";
pub const QUALITY: &str = "quality.json";

/// Clusters listed per side in the impact report.
pub const TOP_N: usize = 100;

/// Loads a dataset and hashes the file it came from.
pub fn load_input(path: &Path) -> CliResult<(Dataset, String)> {
    let hash = hash_file(path)?;
    let dataset = load_dataset(path, InputFormat::from_path(path))?;
    Ok((dataset, hash))
}

/// Loads the dataset named on the command line, or else the one recorded in
/// the run, and records it in the run.
pub fn resolve_dataset(run: Option<&RunDir>, explicit: Option<&Path>) -> CliResult<Dataset> {
    let path: PathBuf = match (explicit, run) {
        (Some(p), _) => p.to_owned(),
        (None, Some(run)) => run.manifest()?.dataset.ok_or(CliError::NoDataset)?.path,
        (None, None) => return Err(CliError::NoDataset),
    };
    let (dataset, hash) = load_input(&path)?;
    if let Some(run) = run {
        let recorded = run.manifest()?.dataset;
        if recorded.as_ref().map(|d| (&d.path, &d.hash)) != Some((&path, &hash)) {
            run.set_dataset(&path, &hash)?;
        }
    }
    Ok(dataset)
}

pub fn run_impact(run: Option<&RunDir>, dataset: &Dataset) -> CliResult<ImpactReport> {
    let report = impact_report(dataset, TOP_N);
    if let Some(run) = run {
        run.write_artifact(IMPACT, &to_json(&report)?, run.upstream(&[DATASET])?)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemSampleMeta {
    pub seed: u64,
    pub n_unique: usize,
    #[serde(rename = "M")]
    pub horizon: f64,
    pub population_exhausted: bool,
    pub sampled: usize,
    pub jaccard_distance_total: f64,
}

pub fn run_sample_items(
    run: Option<&RunDir>,
    dataset: &Dataset,
    n: usize,
    seed: u64,
) -> CliResult<ItemSample> {
    let sample = importance_sample_items(dataset, n, seed)?;
    if let Some(run) = run {
        let meta = ItemSampleMeta {
            seed,
            n_unique: n,
            horizon: sample.horizon,
            population_exhausted: sample.population_exhausted,
            sampled: sample.items.len(),
            jaccard_distance_total: sample.jaccard_distance_total,
        };
        run.set_seed(seed)?;
        let up = run.upstream(&[DATASET])?;
        run.write_artifact(ITEM_CLOCKS, &to_jsonl(&sample.clocks)?, up.clone())?;
        run.write_artifact(ITEM_META, &to_json(&meta)?, up.clone())?;
        run.write_artifact(ITEM_SAMPLE, &to_jsonl(&sample.items)?, up)?;
    }
    Ok(sample)
}

pub fn load_item_sample(run: &RunDir) -> CliResult<(Vec<SampledItem>, ItemSampleMeta)> {
    let meta = run.read_json(ITEM_META)?;
    let items = run.read_rows(ITEM_SAMPLE)?;
    Ok((items, meta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSampleMeta {
    pub seed: u64,
    pub n_unique: usize,
    #[serde(rename = "M")]
    pub horizon: f64,
    pub population_exhausted: bool,
    pub sampled: usize,
    pub totals: CategoryTotals,
}

pub fn run_sample_pairs(
    run: Option<&RunDir>,
    dataset: &Dataset,
    n: usize,
    seed: u64,
) -> CliResult<PairSample> {
    let sample = sample_pairs(dataset, n, seed)?;
    if let Some(run) = run {
        let meta = PairSampleMeta {
            seed,
            n_unique: n,
            horizon: sample.horizon,
            population_exhausted: sample.population_exhausted,
            sampled: sample.pairs.len(),
            totals: sample.totals,
        };
        run.set_seed(seed)?;
        let up = run.upstream(&[DATASET])?;
        run.write_artifact(PAIR_CLOCKS, &to_jsonl(&sample.clocks())?, up.clone())?;
        run.write_artifact(PAIR_META, &to_json(&meta)?, up.clone())?;
        run.write_artifact(PAIR_SAMPLE, &to_jsonl(&sample.pairs)?, up)?;
    }
    Ok(sample)
}

pub fn load_pair_sample(run: &RunDir) -> CliResult<PairSample> {
    let meta: PairSampleMeta = run.read_json(PAIR_META)?;
    let pairs: Vec<SampledPair> = run.read_rows(PAIR_SAMPLE)?;
    Ok(PairSample {
        pairs,
        horizon: meta.horizon,
        seed: meta.seed,
        n_requested: meta.n_unique,
        population_exhausted: meta.population_exhausted,
        totals: meta.totals,
    })
}

/// Persisted clocks of a pair sample, for resuming draws elsewhere.
pub fn load_pair_clocks(run: &RunDir) -> CliResult<Vec<ClockedElement<PairKey>>> {
    run.read_rows(PAIR_CLOCKS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub budget: usize,
    pub tasks: usize,
    pub drawn_pairs: usize,
    pub self_pairs: usize,
    pub horizon_reached: bool,
}

pub fn run_export_tasks(run: &RunDir, budget: usize) -> CliResult<TaskExport> {
    let sample = load_pair_sample(run)?;
    let export = export_judgement_tasks(&sample, budget);
    let meta = TaskMeta {
        budget,
        tasks: export.tasks.len(),
        drawn_pairs: export.pairs.len(),
        self_pairs: export.pairs.iter().filter(|p| p.key.is_self).count(),
        horizon_reached: export.horizon_reached,
    };
    let up = run.upstream(&[PAIR_SAMPLE, PAIR_META])?;
    run.write_artifact(TASK_PAIRS, &to_jsonl(&export.pairs)?, up.clone())?;
    run.write_artifact(TASK_META, &to_json(&meta)?, up.clone())?;
    run.write_artifact(TASKS, &to_jsonl(&export.tasks)?, up)?;
    Ok(export)
}

pub fn load_tasks(run: &RunDir) -> CliResult<Vec<JudgementTask>> {
    run.read_rows(TASKS)
}

pub fn load_task_pairs(run: &RunDir) -> CliResult<Vec<WeightedPair>> {
    run.read_rows(TASK_PAIRS)
}

/// The judgement log in write order; empty before the first import.
pub fn load_judgements(run: &RunDir) -> CliResult<Vec<Judgement>> {
    if !run.has_artifact(JUDGEMENTS)? {
        return Ok(Vec::new());
    }
    run.read_rows(JUDGEMENTS)
}

/// Latest verdict per task.
pub fn latest_verdicts(log: &[Judgement]) -> HashMap<&str, &Judgement> {
    log.iter().map(|j| (j.task_id.as_str(), j)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub received: usize,
    pub recorded: usize,
    /// Recorded verdicts that replaced an earlier verdict for the same task.
    pub overwritten: usize,
    /// Verdicts skipped because their task was never exported.
    pub unknown_tasks: Vec<String>,
}

/// Appends the verdicts for known tasks to the judgement log. The log keeps
/// every entry; the last verdict for a task wins.
pub fn append_judgements(
    run: &RunDir,
    tasks: &[JudgementTask],
    incoming: &[Judgement],
) -> CliResult<ImportSummary> {
    let known: BTreeSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    let mut log = load_judgements(run)?;
    let mut seen: BTreeSet<String> = log.iter().map(|j| j.task_id.clone()).collect();
    let mut summary = ImportSummary {
        received: incoming.len(),
        ..Default::default()
    };
    let mut unknown = BTreeSet::new();
    for j in incoming {
        if !known.contains(j.task_id.as_str()) {
            unknown.insert(j.task_id.clone());
            continue;
        }
        if !seen.insert(j.task_id.clone()) {
            summary.overwritten += 1;
        }
        log.push(j.clone());
        summary.recorded += 1;
    }
    summary.unknown_tasks = unknown.into_iter().collect();
    if summary.recorded > 0 || !run.has_artifact(JUDGEMENTS)? {
        run.write_artifact(JUDGEMENTS, &to_jsonl(&log)?, BTreeMap::new())?;
    }
    Ok(summary)
}

pub fn run_import_judgements(run: &RunDir, file: &Path) -> CliResult<ImportSummary> {
    let incoming: Vec<Judgement> = crate::run::read_jsonl(file)?;
    let tasks = load_tasks(run)?;
    append_judgements(run, &tasks, &incoming)
}

/// The quality report for the drawn pairs under the current judgement log.
pub fn quality_from(
    pairs: &[WeightedPair],
    log: &[Judgement],
    totals: &CategoryTotals,
) -> QualityReport {
    let app = apply_judgements(pairs, log);
    quality_report(&app, totals)
}

pub fn run_quality(run: &RunDir) -> CliResult<QualityReport> {
    let meta: PairSampleMeta = run.read_json(PAIR_META)?;
    let pairs = load_task_pairs(run)?;
    let log = load_judgements(run)?;
    let report = quality_from(&pairs, &log, &meta.totals);
    let mut inputs = vec![TASK_PAIRS, PAIR_META];
    if run.has_artifact(JUDGEMENTS)? {
        inputs.push(JUDGEMENTS);
    }
    run.write_artifact(QUALITY, &to_json(&report)?, run.upstream(&inputs)?)?;
    Ok(report)
}

/// Tasks for the drawn pairs that still lack a verdict, in export order.
pub fn pending_tasks<'a>(tasks: &'a [JudgementTask], log: &[Judgement]) -> Vec<&'a JudgementTask> {
    let judged = latest_verdicts(log);
    tasks
        .iter()
        .filter(|t| !judged.contains_key(t.task_id.as_str()))
        .collect()
}

