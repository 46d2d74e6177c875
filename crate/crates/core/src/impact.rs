//! Exact impact metrics (split rate, merge rate, Jaccard distance) per item,
//! per set, per cluster, and estimates over an importance-weighted item sample.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttrValue, Dataset, Overlap, Side};
use crate::numeric::{pairwise_sum, pairwise_sum_by, WeightedMean};
use crate::sampler::SampledItem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpactTriple {
    pub split_rate: f64,
    pub merge_rate: f64,
    pub jaccard_distance: f64,
}

impl ImpactTriple {
    pub const ZERO: Self = Self {
        split_rate: 0.0,
        merge_rate: 0.0,
        jaccard_distance: 0.0,
    };

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Split => self.split_rate,
            Metric::Merge => self.merge_rate,
            Metric::Jd => self.jaccard_distance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Split,
    Merge,
    Jd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Split, Metric::Merge, Metric::Jd];
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "split" | "split_rate" => Ok(Metric::Split),
            "merge" | "merge_rate" => Ok(Metric::Merge),
            "jd" | "jaccard" | "jaccard_distance" => Ok(Metric::Jd),
            other => Err(format!("unknown metric {other:?} (expected split, merge or jd)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Split => "split",
            Metric::Merge => "merge",
            Metric::Jd => "jd",
        })
    }
}

/// Weights of the split-off and merged-in parts of an overlap's clusters.
///
/// Extent equality is decided on member counts, so an unchanged cluster gets
/// exactly zero regardless of rounding in the weight sums.
pub(crate) fn split_merge_weights(dataset: &Dataset, overlap: &Overlap) -> (f64, f64) {
    let base = dataset.base().cluster(overlap.base_cluster());
    let exp = dataset.exp().cluster(overlap.exp_cluster());
    let shared = overlap.members().len();
    let split = if shared == base.len() {
        0.0
    } else {
        (base.weight() - overlap.weight()).max(0.0)
    };
    let merge = if shared == exp.len() {
        0.0
    } else {
        (exp.weight() - overlap.weight()).max(0.0)
    };
    (split, merge)
}

pub fn impact_of_overlap(dataset: &Dataset, overlap: &Overlap) -> ImpactTriple {
    let base_weight = dataset.base().cluster(overlap.base_cluster()).weight();
    let exp_weight = dataset.exp().cluster(overlap.exp_cluster()).weight();
    let (split, merge) = split_merge_weights(dataset, overlap);
    if split == 0.0 && merge == 0.0 {
        return ImpactTriple::ZERO;
    }
    let union = base_weight + merge;
    ImpactTriple {
        split_rate: (split / base_weight).min(1.0),
        merge_rate: (merge / exp_weight).min(1.0),
        jaccard_distance: ((split + merge) / union).min(1.0),
    }
}

/// Impact of the item at dataset index `index`.
pub fn impact_of_index(dataset: &Dataset, index: usize) -> ImpactTriple {
    impact_of_overlap(dataset, dataset.overlap_of(index))
}

pub fn impact_of_item(dataset: &Dataset, item_id: &str) -> Result<ImpactTriple> {
    Ok(impact_of_index(dataset, dataset.require_index(item_id)?))
}

/// Weighted average impact over item indices; `None` for an empty set.
pub fn impact_of_indices(dataset: &Dataset, indices: &[usize]) -> Option<ImpactTriple> {
    if indices.is_empty() {
        return None;
    }
    let weight = pairwise_sum_by(indices, |&i| dataset.weight(i));
    let mut triples = Vec::with_capacity(indices.len());
    for &i in indices {
        triples.push((dataset.weight(i), impact_of_index(dataset, i)));
    }
    let avg = |metric: Metric| pairwise_sum_by(&triples, |(w, t)| w * t.get(metric)) / weight;
    Some(ImpactTriple {
        split_rate: avg(Metric::Split),
        merge_rate: avg(Metric::Merge),
        jaccard_distance: avg(Metric::Jd),
    })
}

/// Weighted average impact over a set of item ids.
pub fn impact_of_set<'a>(
    dataset: &Dataset,
    item_ids: impl IntoIterator<Item = &'a str>,
) -> Result<ImpactTriple> {
    let mut indices = item_ids
        .into_iter()
        .map(|id| dataset.require_index(id))
        .collect::<Result<Vec<_>>>()?;
    indices.sort_unstable();
    indices.dedup();
    impact_of_indices(dataset, &indices).ok_or(Error::EmptySlice)
}

/// Impact over the whole population `T`.
pub fn overall_impact(dataset: &Dataset) -> ImpactTriple {
    let all: Vec<usize> = (0..dataset.len()).collect();
    impact_of_indices(dataset, &all).expect("datasets are never empty")
}

/// Whether `Base(i)` and `Exp(i)` have different extents.
pub fn is_affected(dataset: &Dataset, index: usize) -> bool {
    let overlap = dataset.overlap_of(index);
    let shared = overlap.members().len();
    shared != dataset.base().cluster(overlap.base_cluster()).len()
        || shared != dataset.exp().cluster(overlap.exp_cluster()).len()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectedPartition {
    pub affected: Vec<String>,
    pub unaffected: Vec<String>,
}

/// Splits `T` into affected and unaffected items (ids sorted).
pub fn partition_affected(dataset: &Dataset) -> AffectedPartition {
    let mut out = AffectedPartition::default();
    for (i, item) in dataset.items().iter().enumerate() {
        if is_affected(dataset, i) {
            out.affected.push(item.item_id.clone());
        } else {
            out.unaffected.push(item.item_id.clone());
        }
    }
    out
}

pub fn affected_indices(dataset: &Dataset) -> Vec<usize> {
    (0..dataset.len())
        .filter(|&i| is_affected(dataset, i))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterContribution {
    pub cluster_id: String,
    pub side: Side,
    pub cluster_weight: f64,
    pub metric_value: f64,
    pub contribution: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideSelection {
    Base,
    Exp,
    Interleaved,
}

fn side_contributions(dataset: &Dataset, side: Side, metric: Metric) -> Vec<ClusterContribution> {
    let total = dataset.total_weight();
    dataset
        .clustering(side)
        .clusters()
        .iter()
        .map(|c| {
            let value = impact_of_indices(dataset, c.members())
                .expect("clusters are never empty")
                .get(metric);
            ClusterContribution {
                cluster_id: c.id().to_owned(),
                side,
                cluster_weight: c.weight(),
                metric_value: value,
                contribution: c.weight() * value / total,
            }
        })
        .collect()
}

fn by_contribution(a: &ClusterContribution, b: &ClusterContribution) -> Ordering {
    b.contribution
        .total_cmp(&a.contribution)
        .then(a.side.cmp(&b.side))
        .then_with(|| a.cluster_id.cmp(&b.cluster_id))
}

/// Clusters ranked by their contribution `weight(C)·m(C)/weight(T)` to the
/// overall metric. Ties go to Base before Exp, then to the smaller id.
pub fn most_affected_clusters(
    dataset: &Dataset,
    side: SideSelection,
    metric: Metric,
    top_n: usize,
) -> Vec<ClusterContribution> {
    let mut all = match side {
        SideSelection::Base => side_contributions(dataset, Side::Base, metric),
        SideSelection::Exp => side_contributions(dataset, Side::Exp, metric),
        SideSelection::Interleaved => {
            let mut v = side_contributions(dataset, Side::Base, metric);
            v.extend(side_contributions(dataset, Side::Exp, metric));
            v
        }
    };
    all.sort_by(by_contribution);
    all.truncate(top_n);
    all
}

/// Summary report of the exact impact of a clustering change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub overall: ImpactTriple,
    /// The per-side top clusters by Jaccard distance contribution, interleaved.
    pub most_affected: Vec<ClusterContribution>,
    pub affected_weight_fraction: f64,
    pub item_count: usize,
    pub affected_count: usize,
    pub base_cluster_count: usize,
    pub exp_cluster_count: usize,
    pub total_weight: f64,
}

pub fn impact_report(dataset: &Dataset, top_n: usize) -> ImpactReport {
    let mut most_affected = most_affected_clusters(dataset, SideSelection::Base, Metric::Jd, top_n);
    most_affected.extend(most_affected_clusters(
        dataset,
        SideSelection::Exp,
        Metric::Jd,
        top_n,
    ));
    most_affected.sort_by(by_contribution);
    let affected = affected_indices(dataset);
    let affected_weight = pairwise_sum_by(&affected, |&i| dataset.weight(i));
    ImpactReport {
        overall: overall_impact(dataset),
        most_affected,
        affected_weight_fraction: affected_weight / dataset.total_weight(),
        item_count: dataset.len(),
        affected_count: affected.len(),
        base_cluster_count: dataset.base().len(),
        exp_cluster_count: dataset.exp().len(),
        total_weight: dataset.total_weight(),
    }
}

/// Estimate of a metric's contribution from one slice of an item sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceImpactEstimate {
    /// `Σ_{i ∈ slice} w(i)·m(i)`.
    pub value: f64,
    pub std_err: Option<f64>,
    pub items: usize,
    pub draws: u64,
    /// Set when no sampled item falls in the slice; `value` is then 0.
    pub empty: bool,
}

fn total_draws(sample: &[SampledItem]) -> u64 {
    sample.iter().map(|s| s.draw_count).sum()
}

/// Sums `w(i)·m(i)` over the sampled items accepted by `in_slice`.
///
/// With the trivial predicate this is the estimate of `m(T)`. The standard
/// error treats every draw as an independent observation of
/// `1(i ∈ slice)·m(i)·jd(T)/jd(i)`.
pub fn estimate_impact_from_sample(
    sample: &[SampledItem],
    metric: Metric,
    in_slice: impl Fn(&SampledItem) -> bool,
) -> Result<SliceImpactEstimate> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = total_draws(sample) as f64;
    let mut contributions = Vec::new();
    let mut observations = Vec::with_capacity(sample.len());
    let mut draws = 0;
    for s in sample {
        let m = s.impact.get(metric);
        if in_slice(s) {
            contributions.push(s.importance_weight * m);
            draws += s.draw_count;
            let per_draw = s.importance_weight * n / s.draw_count as f64;
            observations.push((s.draw_count, per_draw * m));
        } else {
            observations.push((s.draw_count, 0.0));
        }
    }
    let std_err = WeightedMean::replicated(&observations).and_then(|wm| wm.std_err);
    Ok(SliceImpactEstimate {
        value: pairwise_sum(&contributions),
        std_err,
        items: contributions.len(),
        draws,
        empty: contributions.is_empty(),
    })
}

/// Sample-based view of a slice: its share of the affected weight and its
/// contribution to each overall metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    /// `Σ_{i ∈ slice} w(i)`: estimated weight of the slice's affected items
    /// as a fraction of `weight(T)`.
    pub weight: f64,
    pub split_rate: f64,
    pub merge_rate: f64,
    pub jaccard_distance: f64,
    pub items: usize,
    pub draws: u64,
}

pub fn summarize_slice(
    sample: &[SampledItem],
    in_slice: impl Fn(&SampledItem) -> bool,
) -> Result<SliceSummary> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let est = |m| estimate_impact_from_sample(sample, m, &in_slice).map(|e| e.value);
    let members: Vec<&SampledItem> = sample.iter().filter(|s| in_slice(s)).collect();
    Ok(SliceSummary {
        weight: pairwise_sum_by(&members, |s| s.importance_weight),
        split_rate: est(Metric::Split)?,
        merge_rate: est(Metric::Merge)?,
        jaccard_distance: est(Metric::Jd)?,
        items: members.len(),
        draws: members.iter().map(|s| s.draw_count).sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// Attribute value as text; `None` for items lacking the attribute.
    pub value: Option<String>,
    #[serde(flatten)]
    pub summary: SliceSummary,
}

/// Groups the slice by the value of `attribute` and ranks the groups by
/// their contribution to `metric`, largest first.
pub fn group_slice(
    sample: &[SampledItem],
    in_slice: impl Fn(&SampledItem) -> bool,
    attribute: &str,
    metric: Metric,
) -> Result<Vec<GroupSummary>> {
    let key_of = |s: &SampledItem| s.attributes.get(attribute).map(AttrValue::to_string);
    let mut keys: BTreeMap<Option<String>, ()> = BTreeMap::new();
    for s in sample.iter().filter(|s| in_slice(s)) {
        keys.insert(key_of(s), ());
    }
    let mut groups = keys
        .into_keys()
        .map(|key| {
            let summary = summarize_slice(sample, |s| in_slice(s) && key_of(s) == key)?;
            Ok(GroupSummary {
                value: key,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let metric_of = |g: &GroupSummary| match metric {
        Metric::Split => g.summary.split_rate,
        Metric::Merge => g.summary.merge_rate,
        Metric::Jd => g.summary.jaccard_distance,
    };
    groups.sort_by(|a, b| metric_of(b).total_cmp(&metric_of(a)).then_with(|| a.value.cmp(&b.value)));
    Ok(groups)
}
