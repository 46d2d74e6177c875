//! The weighted population of item pairs whose judgements drive the quality
//! estimates.
//!
//! For a vantage item `i` and `j ∈ Base(i) ∪ Exp(i)` the pair weight is
//!
//! | category | `j ∈`          | weight `u_ij · weight(T)`                   | label |
//! |----------|----------------|---------------------------------------------|-------|
//! | split    | `Base(i)\Exp(i)` | `w_i · w_j / w(Base(i))`                  | −1    |
//! | merge    | `Exp(i)\Base(i)` | `w_i · w_j / w(Exp(i))`                   | +1    |
//! | stable   | `Base(i)∩Exp(i)` | `w_i · w_j · |wB − wE| / (wB · wE)`       | sgn(wB − wE) |
//!
//! Weights are stored without the `1/weight(T)` factor (`raw_weight`); it is
//! applied once in totals and estimator multipliers. Self-pairs `(i, i)` are
//! stable pairs. When `wB = wE` the stable label is fixed at `+1`; the weight
//! is zero there.

mod sampling;
mod tasks;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::split_merge_weights;
use crate::model::{Dataset, Overlap};
use crate::numeric::pairwise_sum_by;
use crate::sampler::stream::write_component;
use crate::sampler::SampleKey;

pub use sampling::{sample_pairs, sample_pairs_sharded, PairSample, SampledPair};
pub use tasks::{export_judgement_tasks, task_id_for, tasks_for_pairs, JudgementTask, TaskExport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairCategory {
    Split,
    Merge,
    Stable,
}

impl fmt::Display for PairCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairCategory::Split => "split",
            PairCategory::Merge => "merge",
            PairCategory::Stable => "stable",
        })
    }
}

/// Ordered pair `(vantage, other)` with its category.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub vantage: String,
    pub other: String,
    pub category: PairCategory,
    pub is_self: bool,
}

impl SampleKey for PairKey {
    fn write_key(&self, out: &mut Vec<u8>) {
        write_component(out, self.vantage.as_bytes());
        write_component(out, self.other.as_bytes());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPair {
    #[serde(flatten)]
    pub key: PairKey,
    /// `u_ij · weight(T)`.
    pub raw_weight: f64,
    pub label: i8,
    pub draw_count: u64,
}

impl WeightedPair {
    /// The normalized pair weight `u_ij`.
    pub fn u(&self, total_weight: f64) -> f64 {
        self.raw_weight / total_weight
    }

    /// Judgement task id, or `None` for a self-pair.
    pub fn task_id(&self) -> Option<String> {
        (!self.key.is_self).then(|| task_id_for(&self.key.vantage, &self.key.other))
    }
}

/// Per-vantage row sums of raw pair weights, by category.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RowSums {
    pub split: f64,
    pub merge: f64,
    pub stable: f64,
}

impl RowSums {
    pub fn total(&self) -> f64 {
        self.split + self.merge + self.stable
    }
}

/// `|wB − wE| / (wB · wE)`; exactly zero when the extents agree.
fn stable_factor(dataset: &Dataset, overlap: &Overlap) -> f64 {
    let wb = dataset.base().cluster(overlap.base_cluster()).weight();
    let we = dataset.exp().cluster(overlap.exp_cluster()).weight();
    (wb - we).abs() / (wb * we)
}

fn stable_label(dataset: &Dataset, overlap: &Overlap) -> i8 {
    let wb = dataset.base().cluster(overlap.base_cluster()).weight();
    let we = dataset.exp().cluster(overlap.exp_cluster()).weight();
    if wb < we {
        -1
    } else {
        1
    }
}

/// Raw row sums for the vantage item at `index`.
pub fn row_sums(dataset: &Dataset, index: usize) -> RowSums {
    let overlap = dataset.overlap_of(index);
    let w = dataset.weight(index);
    let wb = dataset.base().cluster(overlap.base_cluster()).weight();
    let we = dataset.exp().cluster(overlap.exp_cluster()).weight();
    let (split, merge) = split_merge_weights(dataset, overlap);
    RowSums {
        split: w * split / wb,
        merge: w * merge / we,
        stable: w * stable_factor(dataset, overlap) * overlap.weight(),
    }
}

/// Number of pairs with a positive weight that have vantage points in `overlap`.
pub(crate) fn positive_pairs_per_vantage(dataset: &Dataset, overlap: &Overlap) -> usize {
    let shared = overlap.members().len();
    let base = dataset.base().cluster(overlap.base_cluster()).len();
    let exp = dataset.exp().cluster(overlap.exp_cluster()).len();
    let stable = if stable_factor(dataset, overlap) > 0.0 {
        shared
    } else {
        0
    };
    (base - shared) + (exp - shared) + stable
}

/// The neighbours `j ∈ Base(i) ∪ Exp(i)` shared by all vantage items of one
/// overlap, with cumulative per-neighbour factors for weighted selection.
pub(crate) struct Neighbourhood {
    pub members: Vec<(usize, PairCategory)>,
    pub factors: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub stable_label: i8,
}

impl Neighbourhood {
    pub fn build(dataset: &Dataset, overlap: &Overlap) -> Self {
        let base = dataset.base().cluster(overlap.base_cluster());
        let exp = dataset.exp().cluster(overlap.exp_cluster());
        let stable = stable_factor(dataset, overlap);
        let mut members = Vec::with_capacity(base.len() + exp.len());
        let mut factors = Vec::with_capacity(base.len() + exp.len());
        for &j in base.members() {
            if dataset.exp().cluster_index_of(j) == overlap.exp_cluster() {
                members.push((j, PairCategory::Stable));
                factors.push(stable * dataset.weight(j));
            } else {
                members.push((j, PairCategory::Split));
                factors.push(dataset.weight(j) / base.weight());
            }
        }
        for &j in exp.members() {
            if dataset.base().cluster_index_of(j) != overlap.base_cluster() {
                members.push((j, PairCategory::Merge));
                factors.push(dataset.weight(j) / exp.weight());
            }
        }
        let mut acc = 0.0;
        let cumulative = factors
            .iter()
            .map(|f| {
                acc += f;
                acc
            })
            .collect();
        Self {
            members,
            factors,
            cumulative,
            stable_label: stable_label(dataset, overlap),
        }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Position of the neighbour selected by `u ∈ (0, 1]`.
    pub fn select(&self, u: f64) -> usize {
        let target = u * self.total();
        self.cumulative
            .partition_point(|&c| c < target)
            .min(self.members.len() - 1)
    }

    pub fn pair(&self, dataset: &Dataset, vantage: usize, position: usize) -> WeightedPair {
        let (j, category) = self.members[position];
        let label = match category {
            PairCategory::Split => -1,
            PairCategory::Merge => 1,
            PairCategory::Stable => self.stable_label,
        };
        WeightedPair {
            key: PairKey {
                vantage: dataset.item(vantage).item_id.clone(),
                other: dataset.item(j).item_id.clone(),
                category,
                is_self: vantage == j,
            },
            raw_weight: dataset.weight(vantage) * self.factors[position],
            label,
            draw_count: 1,
        }
    }
}

/// Weight and label of the pair `(i, j)`.
pub fn pair_weight(dataset: &Dataset, vantage: &str, other: &str) -> Result<WeightedPair> {
    let i = dataset.require_index(vantage)?;
    let j = dataset.require_index(other)?;
    let in_base = dataset.base().cluster_index_of(i) == dataset.base().cluster_index_of(j);
    let in_exp = dataset.exp().cluster_index_of(i) == dataset.exp().cluster_index_of(j);
    if !in_base && !in_exp {
        return Err(Error::NotInPopulation {
            vantage: vantage.to_owned(),
            other: other.to_owned(),
        });
    }
    let overlap = dataset.overlap_of(i);
    let wi = dataset.weight(i);
    let wj = dataset.weight(j);
    let (category, raw_weight, label) = match (in_base, in_exp) {
        (true, false) => (
            PairCategory::Split,
            wi * wj / dataset.base().cluster(overlap.base_cluster()).weight(),
            -1,
        ),
        (false, true) => (
            PairCategory::Merge,
            wi * wj / dataset.exp().cluster(overlap.exp_cluster()).weight(),
            1,
        ),
        _ => (
            PairCategory::Stable,
            wi * stable_factor(dataset, overlap) * wj,
            stable_label(dataset, overlap),
        ),
    };
    Ok(WeightedPair {
        key: PairKey {
            vantage: vantage.to_owned(),
            other: other.to_owned(),
            category,
            is_self: i == j,
        },
        raw_weight,
        label,
        draw_count: 1,
    })
}

/// Total normalized pair weight per category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryTotals {
    /// Equals `SplitRate(T)`.
    pub split_total: f64,
    /// Equals `MergeRate(T)`.
    pub merge_total: f64,
    pub stable_total: f64,
    pub all_total: f64,
    pub total_weight: f64,
}

/// Category totals from per-vantage row sums, without enumerating pairs.
pub fn category_totals(dataset: &Dataset) -> CategoryTotals {
    let rows: Vec<RowSums> = (0..dataset.len()).map(|i| row_sums(dataset, i)).collect();
    let total_weight = dataset.total_weight();
    let split_total = pairwise_sum_by(&rows, |r| r.split) / total_weight;
    let merge_total = pairwise_sum_by(&rows, |r| r.merge) / total_weight;
    let stable_total = pairwise_sum_by(&rows, |r| r.stable) / total_weight;
    CategoryTotals {
        split_total,
        merge_total,
        stable_total,
        all_total: split_total + merge_total + stable_total,
        total_weight,
    }
}

/// Every pair of the population, zero-weight stable pairs included.
/// Quadratic in cluster sizes; meant for small datasets and tests.
pub fn enumerate_pairs(dataset: &Dataset) -> Vec<WeightedPair> {
    let mut out = Vec::new();
    let mut cache: Vec<Option<Neighbourhood>> = (0..dataset.overlaps().len()).map(|_| None).collect();
    for i in 0..dataset.len() {
        let o = dataset.overlap_index_of(i);
        let nb = cache[o].get_or_insert_with(|| Neighbourhood::build(dataset, dataset.overlap_of(i)));
        for pos in 0..nb.members.len() {
            out.push(nb.pair(dataset, i, pos));
        }
    }
    out
}
