//! Two-stage pair sampling.
//!
//! Conceptually every pair `(i, j)` has its own exponential clock with rate
//! `u_ij`. Grouped by vantage, the pairs of `i` form a Poisson process of rate
//! `r_i = Σ_j u_ij` in which each arrival picks `j` with probability
//! `u_ij / r_i`; the first arrival that picks `j` is the clock of `(i, j)`.
//! Simulating those per-vantage processes in time order therefore yields the
//! same unique pairs and initial draw times as clocking every pair, without
//! ever materializing the quadratic pair population.
//!
//! Only the `n` vantages with the smallest first arrivals can contribute: each
//! of them yields a distinct new pair on its first arrival, so the `n`-th
//! unique pair appears no later than the `n`-th vantage clock.

use std::collections::{BinaryHeap, HashSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{category_totals, positive_pairs_per_vantage, row_sums, CategoryTotals, Neighbourhood, PairKey, WeightedPair};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::sampler::{
    poisson_draw_counts, shard, smallest_clocks, smallest_clocks_sharded, stream, ClockedElement,
    DEFAULT_SHARDS,
};

const VANTAGE_CLOCK_DOMAIN: &str = "pair-vantage-clock";
const ARRIVAL_DOMAIN: &str = "pair-vantage-arrivals";
const PAIR_CLOCK_DOMAIN: &str = "pair-clock";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledPair {
    #[serde(flatten)]
    pub pair: WeightedPair,
    pub dt0: f64,
}

/// With-replacement sample of unique pairs, persisted with the clocks needed
/// to resume drawing later.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    /// Ascending by initial draw time; `draw_count` holds the full-horizon
    /// draw counts.
    pub pairs: Vec<SampledPair>,
    pub horizon: f64,
    pub seed: u64,
    pub n_requested: usize,
    pub population_exhausted: bool,
    pub totals: CategoryTotals,
}

impl PairSample {
    pub fn clocks(&self) -> Vec<ClockedElement<PairKey>> {
        self.pairs
            .iter()
            .map(|p| ClockedElement {
                key: p.pair.key.clone(),
                weight: p.pair.raw_weight,
                dt0: p.dt0,
            })
            .collect()
    }

    pub fn weighted_pairs(&self) -> Vec<WeightedPair> {
        self.pairs.iter().map(|p| p.pair.clone()).collect()
    }
}

struct Arrival {
    time: f64,
    vantage: usize,
}

impl PartialEq for Arrival {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Arrival {}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Arrival {
    // Earliest first out of the max-heap; vantage indices follow id order.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.vantage.cmp(&self.vantage))
    }
}

/// Samples pairs with replacement with probability `u_ij / Σu` per draw,
/// until `n_unique` unique pairs are found.
pub fn sample_pairs(dataset: &Dataset, n_unique: usize, seed: u64) -> Result<PairSample> {
    sample_pairs_sharded(dataset, n_unique, seed, DEFAULT_SHARDS)
}

pub fn sample_pairs_sharded(
    dataset: &Dataset,
    n_unique: usize,
    seed: u64,
    shards: usize,
) -> Result<PairSample> {
    let totals = category_totals(dataset);
    let positive: usize = (0..dataset.len())
        .map(|i| positive_pairs_per_vantage(dataset, dataset.overlap_of(i)))
        .sum();
    if totals.all_total.is_nan() || totals.all_total <= 0.0 || positive == 0 {
        return Err(Error::NoDiff);
    }
    let (first_draws, population_exhausted) = if n_unique >= positive {
        (clock_every_pair(dataset, seed)?, true)
    } else {
        (simulate_vantages(dataset, n_unique, seed, shards)?, false)
    };
    let horizon = first_draws.last().map_or(0.0, |(_, dt0)| *dt0);
    let clocks: Vec<ClockedElement<PairKey>> = first_draws
        .iter()
        .map(|(p, dt0)| ClockedElement {
            key: p.key.clone(),
            weight: p.raw_weight,
            dt0: *dt0,
        })
        .collect();
    let counts = poisson_draw_counts(&clocks, horizon, seed);
    let pairs = first_draws
        .into_iter()
        .zip(counts)
        .map(|((mut pair, dt0), dc)| {
            pair.draw_count = dc.draw_count;
            SampledPair { pair, dt0 }
        })
        .collect();
    Ok(PairSample {
        pairs,
        horizon,
        seed,
        n_requested: n_unique,
        population_exhausted,
        totals,
    })
}

/// Unique pairs with their initial draw times, ascending.
fn simulate_vantages(
    dataset: &Dataset,
    n_unique: usize,
    seed: u64,
    shards: usize,
) -> Result<Vec<(WeightedPair, f64)>> {
    let vantage_clocks = (0..dataset.len())
        .filter_map(|i| {
            let rate = row_sums(dataset, i).total();
            (rate > 0.0).then(|| {
                let mut rng = stream::keyed_rng(seed, VANTAGE_CLOCK_DOMAIN, &dataset.item(i).item_id);
                ClockedElement {
                    key: i,
                    weight: rate,
                    dt0: stream::exponential(&mut rng, rate),
                }
            })
        })
        .collect::<Vec<_>>();
    let vantages = smallest_clocks_sharded(shard(vantage_clocks, shards), n_unique).into_sorted_vec();

    let mut neighbourhoods: Vec<Option<Neighbourhood>> =
        (0..dataset.overlaps().len()).map(|_| None).collect();
    let mut rngs: Vec<ChaCha8Rng> = vantages
        .iter()
        .map(|v| stream::keyed_rng(seed, ARRIVAL_DOMAIN, &dataset.item(v.key).item_id))
        .collect();
    let mut heap: BinaryHeap<Arrival> = vantages
        .iter()
        .enumerate()
        .map(|(slot, v)| Arrival {
            time: v.dt0,
            vantage: slot,
        })
        .collect();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut found = Vec::with_capacity(n_unique);
    while found.len() < n_unique {
        let Some(arrival) = heap.pop() else { break };
        let slot = arrival.vantage;
        let vantage = vantages[slot].key;
        let overlap = dataset.overlap_index_of(vantage);
        let nb = neighbourhoods[overlap]
            .get_or_insert_with(|| Neighbourhood::build(dataset, dataset.overlap_of(vantage)));
        let position = nb.select(stream::uniform_open_closed(&mut rngs[slot]));
        let j = nb.members[position].0;
        if seen.insert((vantage, j)) {
            found.push((nb.pair(dataset, vantage, position), arrival.time));
        }
        let next = arrival.time + stream::exponential(&mut rngs[slot], vantages[slot].weight);
        heap.push(Arrival {
            time: next,
            vantage: slot,
        });
    }
    Ok(found)
}

/// Gives every positive-weight pair its own clock; used when the request
/// covers the whole population.
fn clock_every_pair(dataset: &Dataset, seed: u64) -> Result<Vec<(WeightedPair, f64)>> {
    let clocked: Vec<ClockedElement<PairKey>> = super::enumerate_pairs(dataset)
        .into_iter()
        .filter(|p| p.raw_weight > 0.0)
        .map(|p| {
            let mut rng = stream::keyed_rng(seed, PAIR_CLOCK_DOMAIN, &p.key);
            let dt0 = stream::exponential(&mut rng, p.raw_weight);
            ClockedElement {
                key: p.key,
                weight: p.raw_weight,
                dt0,
            }
        })
        .collect();
    let n = clocked.len();
    Ok(smallest_clocks(clocked, n)
        .into_iter()
        .map(|c| {
            let label = super::pair_weight(dataset, &c.key.vantage, &c.key.other)
                .map(|p| p.label)
                .expect("enumerated pairs are in the population");
            (
                WeightedPair {
                    key: c.key,
                    raw_weight: c.weight,
                    label,
                    draw_count: 1,
                },
                c.dt0,
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ItemRecord;
    use crate::pairs::PairCategory;

    fn fixture_f() -> Dataset {
        Dataset::from_records(vec![
            ItemRecord::new("a", 1.0, "B1", "E1"),
            ItemRecord::new("b", 2.0, "B1", "E2"),
            ItemRecord::new("c", 3.0, "B2", "E2"),
            ItemRecord::new("d", 4.0, "B2", "E2"),
        ])
        .unwrap()
    }

    #[test]
    fn identical_clusterings_have_no_pairs() {
        let ds = Dataset::from_records(vec![
            ItemRecord::new("a", 1.0, "X", "P"),
            ItemRecord::new("b", 1.0, "X", "P"),
        ])
        .unwrap();
        assert!(matches!(sample_pairs(&ds, 10, 0), Err(Error::NoDiff)));
    }

    #[test]
    fn self_pairs_are_flagged() {
        let ds = fixture_f();
        let s = sample_pairs(&ds, 100, 3).unwrap();
        assert!(s.population_exhausted);
        for p in &s.pairs {
            assert_eq!(p.pair.key.is_self, p.pair.key.vantage == p.pair.key.other);
            if p.pair.key.is_self {
                assert_eq!(p.pair.key.category, PairCategory::Stable);
            }
        }
        assert!(s.pairs.iter().any(|p| p.pair.key.is_self));
    }

    #[test]
    fn partial_sample_has_requested_size_and_sorted_clocks() {
        let ds = fixture_f();
        let s = sample_pairs(&ds, 5, 11).unwrap();
        assert_eq!(s.pairs.len(), 5);
        assert!(!s.population_exhausted);
        assert!(s.pairs.windows(2).all(|w| w[0].dt0 <= w[1].dt0));
        assert_eq!(s.horizon, s.pairs[4].dt0);
        assert_eq!(s.pairs[4].pair.draw_count, 1);
        let unique: HashSet<_> = s.pairs.iter().map(|p| p.pair.key.clone()).collect();
        assert_eq!(unique.len(), 5);
    }

    #[test]
    fn deterministic_across_shards() {
        let ds = fixture_f();
        let a = sample_pairs_sharded(&ds, 6, 21, 1).unwrap();
        let b = sample_pairs_sharded(&ds, 6, 21, 4).unwrap();
        let c = sample_pairs_sharded(&ds, 6, 21, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
