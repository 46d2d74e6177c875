use serde::{Deserialize, Serialize};

use super::{
    clock_for, finish_with_replacement, shard, smallest_clocks_sharded, ClockedElement,
    DEFAULT_SHARDS,
};
use crate::error::{Error, Result};
use crate::impact::{affected_indices, impact_of_index, overall_impact, ImpactTriple};
use crate::model::{Attributes, Dataset};

/// A unique item drawn for impact exploration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledItem {
    pub item_id: String,
    pub draw_count: u64,
    /// `w(i) = dc(i)/Σ dc · jd(T)/jd(i)`.
    pub importance_weight: f64,
    #[serde(flatten)]
    pub impact: ImpactTriple,
    #[serde(default)]
    pub attributes: Attributes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemSample {
    /// Sampled items, sorted by id.
    pub items: Vec<SampledItem>,
    /// Clocks of the sampled items (weight = `weight(i)·jd(i)`), ascending.
    pub clocks: Vec<ClockedElement<String>>,
    pub horizon: f64,
    pub seed: u64,
    pub n_requested: usize,
    pub population_exhausted: bool,
    /// Exact `JaccardDistance(T)`.
    pub jaccard_distance_total: f64,
}

/// Importance sample with replacement of affected items, drawn with
/// probability proportional to `weight(i)·JaccardDistance(i)`.
pub fn importance_sample_items(dataset: &Dataset, n_unique: usize, seed: u64) -> Result<ItemSample> {
    importance_sample_items_sharded(dataset, n_unique, seed, DEFAULT_SHARDS)
}

pub fn importance_sample_items_sharded(
    dataset: &Dataset,
    n_unique: usize,
    seed: u64,
    shards: usize,
) -> Result<ItemSample> {
    let affected = affected_indices(dataset);
    if affected.is_empty() {
        return Err(Error::NoDiff);
    }
    let jd_total = overall_impact(dataset).jaccard_distance;
    let clocks = affected
        .iter()
        .map(|&i| {
            let item = dataset.item(i);
            let jd = impact_of_index(dataset, i).jaccard_distance;
            clock_for(item.item_id.clone(), item.weight * jd, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let selection = smallest_clocks_sharded(shard(clocks, shards), n_unique);
    let sample = finish_with_replacement(selection, n_unique, seed);
    let total_draws = sample.total_draws() as f64;

    let mut items: Vec<SampledItem> = sample
        .draws
        .iter()
        .map(|d| {
            let index = dataset.index_of(&d.key).expect("sampled from this dataset");
            let impact = impact_of_index(dataset, index);
            SampledItem {
                item_id: d.key.clone(),
                draw_count: d.draw_count,
                importance_weight: d.draw_count as f64 / total_draws * jd_total
                    / impact.jaccard_distance,
                impact,
                attributes: dataset.item(index).attributes.clone(),
            }
        })
        .collect();
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(ItemSample {
        items,
        clocks: sample.selected,
        horizon: sample.horizon,
        seed,
        n_requested: n_unique,
        population_exhausted: sample.population_exhausted,
        jaccard_distance_total: jd_total,
    })
}
