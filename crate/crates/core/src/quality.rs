//! Quality estimates from judged pairs.
//!
//! Every estimate is a weighted mean of a per-pair indicator over judged
//! pairs, scaled by the total pair weight of the population it averages over:
//!
//! * `ΔPrecision(T) ≈ all_total · mean(l · 1(i ≡ j))`
//! * `GoodSplitRate(T) ≈ split_total · mean(1(i ≢ j))` over split pairs, and
//!   `BadSplitRate(T)` with `1(i ≡ j)`
//! * `GoodMergeRate(T) ≈ merge_total · mean(1(i ≡ j))` over merge pairs, and
//!   `BadMergeRate(T)` with `1(i ≢ j)`
//!
//! Observation weights are `draw_weight · rebalance_weight`, where the draw
//! weight is the draw count of a sampled pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ItemRecord};
use crate::numeric::{pairwise_sum_by, WeightedMean};
use crate::pairs::{enumerate_pairs, row_sums, CategoryTotals, PairCategory, PairKey, WeightedPair};

const Z_95: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Equivalent,
    NotEquivalent,
    Unavailable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub task_id: String,
    pub verdict: Verdict,
}

impl Judgement {
    pub fn new(task_id: impl Into<String>, verdict: Verdict) -> Self {
        Self {
            task_id: task_id.into(),
            verdict,
        }
    }
}

/// Classes within which missing judgements are compensated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisClass {
    #[serde(rename = "self")]
    SelfPair,
    Split,
    Merge,
    Intersection,
}

impl AnalysisClass {
    pub fn of(key: &PairKey) -> Self {
        match (key.category, key.is_self) {
            (_, true) => AnalysisClass::SelfPair,
            (PairCategory::Split, _) => AnalysisClass::Split,
            (PairCategory::Merge, _) => AnalysisClass::Merge,
            (PairCategory::Stable, _) => AnalysisClass::Intersection,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgedPair {
    #[serde(flatten)]
    pub pair: WeightedPair,
    pub verdict: Verdict,
    pub analysis_class: AnalysisClass,
    /// Weight of the pair in the sample; its draw count when sampled.
    pub draw_weight: f64,
    pub rebalance_weight: f64,
}

impl JudgedPair {
    pub fn is_equivalent(&self) -> bool {
        self.verdict == Verdict::Equivalent
    }

    pub fn observation_weight(&self) -> f64 {
        self.draw_weight * self.rebalance_weight
    }
}

/// Sampled and judged mass of one analysis class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassTally {
    pub sampled_pairs: usize,
    pub judged_pairs: usize,
    pub sampled_mass: f64,
    pub judged_mass: f64,
    /// `sampled_mass / judged_mass`; absent when nothing in the class was judged.
    pub rebalance_weight: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgementApplication {
    pub judged: Vec<JudgedPair>,
    pub classes: BTreeMap<AnalysisClass, ClassTally>,
    /// Pairs whose task was marked unavailable.
    pub unavailable_pairs: usize,
    /// Pairs whose task has no verdict yet.
    pub missing_pairs: usize,
    /// Judged task ids that match no sampled pair, sorted.
    pub unknown_tasks: Vec<String>,
}

/// Attaches verdicts to sampled pairs and rebalances each analysis class for
/// the pairs that could not be judged. The last verdict for a task wins.
pub fn apply_judgements(sampled: &[WeightedPair], judgements: &[Judgement]) -> JudgementApplication {
    apply_judgements_weighted(sampled, |p| p.draw_count as f64, judgements)
}

/// [`apply_judgements`] with an explicit sample weight per pair.
pub fn apply_judgements_weighted(
    sampled: &[WeightedPair],
    draw_weight: impl Fn(&WeightedPair) -> f64,
    judgements: &[Judgement],
) -> JudgementApplication {
    let verdicts: HashMap<&str, Verdict> = judgements
        .iter()
        .map(|j| (j.task_id.as_str(), j.verdict))
        .collect();
    let mut known_tasks = BTreeSet::new();
    let mut out = JudgementApplication::default();
    let mut retained = Vec::new();
    for pair in sampled {
        let class = AnalysisClass::of(&pair.key);
        let weight = draw_weight(pair);
        let tally = out.classes.entry(class).or_default();
        tally.sampled_pairs += 1;
        tally.sampled_mass += weight;
        let verdict = match pair.task_id() {
            None => Some(Verdict::Equivalent),
            Some(task) => {
                let v = verdicts.get(task.as_str()).copied();
                known_tasks.insert(task);
                v
            }
        };
        match verdict {
            Some(Verdict::Unavailable) => out.unavailable_pairs += 1,
            None => out.missing_pairs += 1,
            Some(verdict) => {
                tally.judged_pairs += 1;
                tally.judged_mass += weight;
                retained.push((pair, verdict, class, weight));
            }
        }
    }
    for tally in out.classes.values_mut() {
        tally.rebalance_weight =
            (tally.judged_mass > 0.0).then(|| tally.sampled_mass / tally.judged_mass);
    }
    out.judged = retained
        .into_iter()
        .map(|(pair, verdict, class, weight)| JudgedPair {
            pair: pair.clone(),
            verdict,
            analysis_class: class,
            draw_weight: weight,
            rebalance_weight: out.classes[&class].rebalance_weight.unwrap_or(1.0),
        })
        .collect();
    out.unknown_tasks = verdicts
        .keys()
        .filter(|t| !known_tasks.contains(**t))
        .map(|t| t.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_err: Option<f64>,
    pub ci95: Option<[f64; 2]>,
    pub n_effective: f64,
    pub pairs: usize,
}

impl Estimate {
    fn exact_zero(pairs: usize) -> Self {
        Self {
            estimate: 0.0,
            std_err: Some(0.0),
            ci95: Some([0.0, 0.0]),
            n_effective: pairs as f64,
            pairs,
        }
    }

    fn scaled(mean: WeightedMean, multiplier: f64, pairs: usize) -> Self {
        let estimate = multiplier * mean.mean;
        let std_err = mean.std_err.map(|se| multiplier * se);
        Self {
            estimate,
            std_err,
            ci95: std_err.map(|se| [estimate - Z_95 * se, estimate + Z_95 * se]),
            n_effective: mean.n_effective,
            pairs,
        }
    }

    /// The complementary estimate `multiplier − self`, which shares its
    /// standard error.
    fn complement(&self, multiplier: f64) -> Self {
        let estimate = multiplier - self.estimate;
        Self {
            estimate,
            ci95: self.std_err.map(|se| [estimate - Z_95 * se, estimate + Z_95 * se]),
            ..*self
        }
    }
}

fn weighted_mean_of<'a>(
    judged: impl IntoIterator<Item = &'a JudgedPair>,
    x: impl Fn(&JudgedPair) -> f64,
) -> (Option<WeightedMean>, usize) {
    let observations: Vec<(f64, f64)> = judged
        .into_iter()
        .map(|p| (p.observation_weight(), x(p)))
        .collect();
    (WeightedMean::relative_importance(&observations), observations.len())
}

fn delta_precision_term(p: &JudgedPair) -> f64 {
    if p.is_equivalent() {
        p.pair.label as f64
    } else {
        0.0
    }
}

/// `ΔPrecision(T)` from the judged sample.
pub fn estimate_delta_precision(judged: &[JudgedPair], totals: &CategoryTotals) -> Result<Estimate> {
    if totals.all_total == 0.0 {
        return Ok(Estimate::exact_zero(judged.len()));
    }
    let (mean, pairs) = weighted_mean_of(judged, delta_precision_term);
    let mean = mean.ok_or(Error::NoJudgements)?;
    Ok(Estimate::scaled(mean, totals.all_total, pairs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimates {
    pub good_split: Option<Estimate>,
    pub bad_split: Option<Estimate>,
    pub good_merge: Option<Estimate>,
    pub bad_merge: Option<Estimate>,
}

/// Estimates `(good, bad)` over the pairs of one category. `good_when_equivalent`
/// selects which indicator the good rate averages.
fn rate_pair(
    judged: &[JudgedPair],
    category: PairCategory,
    total: f64,
    good_when_equivalent: bool,
) -> (Option<Estimate>, Option<Estimate>) {
    let subsample = judged.iter().filter(|p| p.pair.key.category == category);
    let (mean, pairs) = weighted_mean_of(subsample, |p| {
        if p.is_equivalent() == good_when_equivalent {
            1.0
        } else {
            0.0
        }
    });
    if total == 0.0 {
        return (Some(Estimate::exact_zero(pairs)), Some(Estimate::exact_zero(pairs)));
    }
    match mean {
        None => (None, None),
        Some(mean) => {
            let good = Estimate::scaled(mean, total, pairs);
            let bad = good.complement(total);
            (Some(good), Some(bad))
        }
    }
}

/// The four Good/Bad Split/Merge rates. A rate is `None` when its category
/// has positive weight but no judged pairs.
pub fn estimate_rates(judged: &[JudgedPair], totals: &CategoryTotals) -> RateEstimates {
    let (good_split, bad_split) = rate_pair(judged, PairCategory::Split, totals.split_total, false);
    let (good_merge, bad_merge) = rate_pair(judged, PairCategory::Merge, totals.merge_total, true);
    RateEstimates {
        good_split,
        bad_split,
        good_merge,
        bad_merge,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// `None` when nothing has been judged yet.
    pub delta_precision: Option<Estimate>,
    #[serde(flatten)]
    pub rates: RateEstimates,
    pub classes: BTreeMap<AnalysisClass, ClassTally>,
    pub judged_pairs: usize,
    pub unavailable_pairs: usize,
    pub missing_pairs: usize,
    pub unknown_tasks: usize,
    pub totals: CategoryTotals,
}

pub fn quality_report(application: &JudgementApplication, totals: &CategoryTotals) -> QualityReport {
    QualityReport {
        delta_precision: estimate_delta_precision(&application.judged, totals).ok(),
        rates: estimate_rates(&application.judged, totals),
        classes: application.classes.clone(),
        judged_pairs: application.judged.len(),
        unavailable_pairs: application.unavailable_pairs,
        missing_pairs: application.missing_pairs,
        unknown_tasks: application.unknown_tasks.len(),
        totals: *totals,
    }
}

/// `weight(I)` for the items selected by `in_slice`.
pub fn weight_of_slice(dataset: &Dataset, in_slice: impl Fn(&ItemRecord) -> bool) -> f64 {
    pairwise_sum_by(dataset.items().iter().filter(|i| in_slice(i)), |i| i.weight)
}

/// `pairweight(I) = Σ_{i ∈ I} Σ_j u_ij`, from per-vantage row sums.
pub fn pairweight_of_slice(dataset: &Dataset, in_slice: impl Fn(&ItemRecord) -> bool) -> f64 {
    let rows = (0..dataset.len()).filter(|&i| in_slice(dataset.item(i)));
    pairwise_sum_by(rows, |i| row_sums(dataset, i).total()) / dataset.total_weight()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceQuality {
    pub slice: String,
    /// `ΔPrecision(I)`; `None` when no judged pair has its vantage in the slice.
    pub delta_precision: Option<Estimate>,
    /// `weight(I)/weight(T) · ΔPrecision(I)`.
    pub contribution: Option<f64>,
    pub pairweight: f64,
    pub weight: f64,
    pub insufficient_sample: bool,
}

/// `ΔPrecision(I)` for the slice of vantage items selected by `in_slice`.
///
/// Averages `l · 1(≡)` over judged pairs whose vantage is in the slice and
/// scales by `(weight(T)/weight(I)) · pairweight(I)`. Class rebalancing
/// weights are the global ones already carried by `judged`.
pub fn estimate_slice_delta_precision(
    judged: &[JudgedPair],
    slice: impl Into<String>,
    in_slice: impl Fn(&str) -> bool,
    weight_i: f64,
    pairweight_i: f64,
    total_weight: f64,
) -> SliceQuality {
    let subsample = judged.iter().filter(|p| in_slice(&p.pair.key.vantage));
    let (mean, pairs) = weighted_mean_of(subsample, delta_precision_term);
    let mut out = SliceQuality {
        slice: slice.into(),
        delta_precision: None,
        contribution: None,
        pairweight: pairweight_i,
        weight: weight_i,
        insufficient_sample: false,
    };
    if pairweight_i == 0.0 {
        out.delta_precision = Some(Estimate::exact_zero(pairs));
        out.contribution = Some(0.0);
        return out;
    }
    match mean {
        None => out.insufficient_sample = true,
        Some(mean) => {
            out.delta_precision = Some(Estimate::scaled(mean, total_weight / weight_i * pairweight_i, pairs));
            out.contribution = Some(mean.mean * pairweight_i);
        }
    }
    out
}

/// Slice estimate for the items of `dataset` matching `in_slice`.
pub fn slice_quality(
    dataset: &Dataset,
    judged: &[JudgedPair],
    slice: impl Into<String>,
    in_slice: impl Fn(&ItemRecord) -> bool,
) -> SliceQuality {
    let weight_i = weight_of_slice(dataset, &in_slice);
    let pairweight_i = pairweight_of_slice(dataset, &in_slice);
    estimate_slice_delta_precision(
        judged,
        slice,
        |id| dataset.index_of(id).is_some_and(|i| in_slice(dataset.item(i))),
        weight_i,
        pairweight_i,
        dataset.total_weight(),
    )
}

/// The whole positive-weight pair population with a verdict from `oracle`
/// for every non-self pair, and each pair weighted by its raw `u`. Feeding
/// this to the estimators computes the exact quantities.
pub fn judge_population(
    dataset: &Dataset,
    oracle: impl Fn(&str, &str) -> bool,
) -> JudgementApplication {
    let pairs: Vec<WeightedPair> = enumerate_pairs(dataset)
        .into_iter()
        .filter(|p| p.raw_weight > 0.0)
        .collect();
    let judgements: Vec<Judgement> = pairs
        .iter()
        .filter_map(|p| {
            p.task_id().map(|t| {
                let verdict = if oracle(&p.key.vantage, &p.key.other) {
                    Verdict::Equivalent
                } else {
                    Verdict::NotEquivalent
                };
                Judgement::new(t, verdict)
            })
        })
        .collect();
    apply_judgements_weighted(&pairs, |p| p.raw_weight, &judgements)
}
