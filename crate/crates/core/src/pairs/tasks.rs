use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PairKey, PairSample, WeightedPair};
use crate::sampler::incremental_draws;

/// A question for a rater. Carries no category, label or weight so the rater
/// cannot tell which clustering proposed the pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JudgementTask {
    pub task_id: String,
    pub item_a: String,
    pub item_b: String,
}

impl JudgementTask {
    pub fn for_pair(a: &str, b: &str) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Self {
            task_id: task_id_for(lo, hi),
            item_a: lo.to_owned(),
            item_b: hi.to_owned(),
        }
    }
}

/// Content hash of the unordered pair `{a, b}`.
pub fn task_id_for(a: &str, b: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut h = Sha256::new();
    for part in [lo, hi] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// One task per distinct unordered non-self pair, in order of first appearance.
pub fn tasks_for_pairs(pairs: &[WeightedPair]) -> Vec<JudgementTask> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .filter(|p| !p.key.is_self)
        .map(|p| JudgementTask::for_pair(&p.key.vantage, &p.key.other))
        .filter(|t| seen.insert(t.task_id.clone()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskExport {
    pub tasks: Vec<JudgementTask>,
    /// Every drawn ordered pair, self-pairs included, with the draw counts
    /// accumulated up to the stopping point.
    pub pairs: Vec<WeightedPair>,
    pub budget: usize,
    /// Set when the horizon ran out before the budget was filled.
    pub horizon_reached: bool,
}

/// Redraws the persisted pair sample one draw at a time and stops right
/// before the draw that would need judgement task `budget + 1`.
///
/// Self-pairs and pairs whose unordered task already exists never count
/// against the budget.
pub fn export_judgement_tasks(sample: &PairSample, budget: usize) -> TaskExport {
    let clocks = sample.clocks();
    let mut tasks: Vec<JudgementTask> = Vec::new();
    let mut known: HashSet<String> = HashSet::new();
    let outcome = incremental_draws(&clocks, sample.horizon, sample.seed, |key: &PairKey| {
        if key.is_self {
            return true;
        }
        let task = JudgementTask::for_pair(&key.vantage, &key.other);
        if known.contains(&task.task_id) {
            return true;
        }
        if tasks.len() >= budget {
            return false;
        }
        known.insert(task.task_id.clone());
        tasks.push(task);
        true
    });
    let by_key: BTreeMap<&PairKey, &WeightedPair> =
        sample.pairs.iter().map(|p| (&p.pair.key, &p.pair)).collect();
    let pairs = outcome
        .draws
        .iter()
        .map(|d| WeightedPair {
            draw_count: d.draw_count,
            ..by_key[&d.key].clone()
        })
        .collect();
    TaskExport {
        tasks,
        pairs,
        budget,
        horizon_reached: outcome.horizon_reached,
    }
}
