//! Weighted sampling with exponential clocks.
//!
//! Each element `e` with weight `w_e` gets an initial draw time
//! `dt0(e) ~ Exp(w_e)`. The `n` smallest clocks are a weighted sample without
//! replacement. For a sample with replacement of `n` unique elements, the
//! horizon `M` is the largest of those `n` clocks and every selected element
//! is drawn again `Pois(w_e · (M − dt0(e)))` more times, either in one go
//! ([`sample_with_replacement`]) or draw by draw ([`incremental_draws`]).

mod items;
pub mod stream;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use items::{
    importance_sample_items, importance_sample_items_sharded, ItemSample, SampledItem,
};
pub use stream::SampleKey;

/// Shard count used when the caller does not choose one.
pub const DEFAULT_SHARDS: usize = 16;

const CLOCK_DOMAIN: &str = "initial-draw-time";
const COUNT_DOMAIN: &str = "draw-count";
const REDRAW_DOMAIN: &str = "next-draw-time";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockedElement<K> {
    pub key: K,
    pub weight: f64,
    pub dt0: f64,
}

fn clock_order<K: Ord>(a: &ClockedElement<K>, b: &ClockedElement<K>) -> Ordering {
    a.dt0.total_cmp(&b.dt0).then_with(|| a.key.cmp(&b.key))
}

/// Assigns `dt0 = -ln(U)/w` from each element's keyed stream.
pub fn assign_clocks<K: SampleKey>(
    elements: &[(K, f64)],
    seed: u64,
) -> Result<Vec<ClockedElement<K>>> {
    elements
        .par_iter()
        .map(|(key, weight)| clock_for(key.clone(), *weight, seed))
        .collect()
}

pub(crate) fn clock_for<K: SampleKey>(key: K, weight: f64, seed: u64) -> Result<ClockedElement<K>> {
    if !(weight.is_finite() && weight > 0.0) {
        return Err(Error::InvalidWeight {
            item: format!("{key:?}"),
            weight,
        });
    }
    let mut rng = stream::keyed_rng(seed, CLOCK_DOMAIN, &key);
    let dt0 = stream::exponential(&mut rng, weight);
    Ok(ClockedElement { key, weight, dt0 })
}

/// Max-heap entry ordered by `(dt0, key)`.
struct ByClock<K>(ClockedElement<K>);

impl<K: Ord> PartialEq for ByClock<K> {
    fn eq(&self, other: &Self) -> bool {
        clock_order(&self.0, &other.0) == Ordering::Equal
    }
}

impl<K: Ord> Eq for ByClock<K> {}

impl<K: Ord> PartialOrd for ByClock<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K: Ord> Ord for ByClock<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        clock_order(&self.0, &other.0)
    }
}

/// Bounded selection of the `n` smallest clocks, mergeable across shards.
pub struct SmallestClocks<K> {
    capacity: usize,
    seen: usize,
    heap: BinaryHeap<ByClock<K>>,
}

impl<K: Ord> SmallestClocks<K> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            seen: 0,
            heap: BinaryHeap::with_capacity(capacity.min(1 << 20) + 1),
        }
    }

    pub fn push(&mut self, element: ClockedElement<K>) {
        self.seen += 1;
        if self.capacity == 0 {
            return;
        }
        if self.heap.len() < self.capacity {
            self.heap.push(ByClock(element));
        } else if let Some(top) = self.heap.peek() {
            if clock_order(&element, &top.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(ByClock(element));
            }
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        let seen = self.seen + other.seen;
        for e in other.heap {
            self.push(e.0);
        }
        self.seen = seen;
        self
    }

    /// Number of elements offered so far, across merged shards.
    pub fn seen(&self) -> usize {
        self.seen
    }

    /// The selected elements, ascending by clock.
    pub fn into_sorted_vec(self) -> Vec<ClockedElement<K>> {
        self.heap.into_sorted_vec().into_iter().map(|e| e.0).collect()
    }
}

impl<K: Ord> Extend<ClockedElement<K>> for SmallestClocks<K> {
    fn extend<I: IntoIterator<Item = ClockedElement<K>>>(&mut self, iter: I) {
        for e in iter {
            self.push(e);
        }
    }
}

/// The `n` smallest clocks, ascending.
pub fn smallest_clocks<K: Ord>(
    clocked: impl IntoIterator<Item = ClockedElement<K>>,
    n: usize,
) -> Vec<ClockedElement<K>> {
    let mut sel = SmallestClocks::new(n);
    sel.extend(clocked);
    sel.into_sorted_vec()
}

/// Selects per shard in parallel, then merges the shard selections.
pub fn smallest_clocks_sharded<K: Ord + Send>(
    shards: Vec<Vec<ClockedElement<K>>>,
    n: usize,
) -> SmallestClocks<K> {
    shards
        .into_par_iter()
        .map(|shard| {
            let mut sel = SmallestClocks::new(n);
            sel.extend(shard);
            sel
        })
        .reduce(|| SmallestClocks::new(n), SmallestClocks::merge)
}

/// Splits elements round-robin into `shards` groups.
pub fn shard<T>(elements: Vec<T>, shards: usize) -> Vec<Vec<T>> {
    let shards = shards.max(1);
    let mut out: Vec<Vec<T>> = (0..shards).map(|_| Vec::new()).collect();
    for (i, e) in elements.into_iter().enumerate() {
        out[i % shards].push(e);
    }
    out
}

/// Weighted sample without replacement: the keys of the `n` smallest clocks.
pub fn sample_without_replacement<K: Ord>(
    clocked: impl IntoIterator<Item = ClockedElement<K>>,
    n: usize,
) -> Vec<K> {
    smallest_clocks(clocked, n)
        .into_iter()
        .map(|e| e.key)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawResult<K> {
    pub key: K,
    pub draw_count: u64,
}

/// Sample with replacement of up to `n_unique` unique elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WithReplacementSample<K> {
    /// Selected elements ascending by clock; persist these to resume later.
    pub selected: Vec<ClockedElement<K>>,
    /// Draw counts, parallel to `selected`.
    pub draws: Vec<DrawResult<K>>,
    /// Largest initial draw time among the selected elements.
    pub horizon: f64,
    /// Set when the population had no more than `n_unique` elements, so the
    /// whole population was returned.
    pub population_exhausted: bool,
}

impl<K> WithReplacementSample<K> {
    pub fn total_draws(&self) -> u64 {
        self.draws.iter().map(|d| d.draw_count).sum()
    }
}

pub fn sample_with_replacement<K: SampleKey>(
    clocked: impl IntoIterator<Item = ClockedElement<K>>,
    n_unique: usize,
    seed: u64,
) -> WithReplacementSample<K> {
    let mut sel = SmallestClocks::new(n_unique);
    sel.extend(clocked);
    finish_with_replacement(sel, n_unique, seed)
}

/// Completes a with-replacement sample from a (possibly merged) selection.
pub fn finish_with_replacement<K: SampleKey>(
    selection: SmallestClocks<K>,
    n_unique: usize,
    seed: u64,
) -> WithReplacementSample<K> {
    let population_exhausted = selection.seen() <= n_unique;
    let selected = selection.into_sorted_vec();
    let horizon = selected.last().map_or(0.0, |e| e.dt0);
    let draws = poisson_draw_counts(&selected, horizon, seed);
    WithReplacementSample {
        selected,
        draws,
        horizon,
        population_exhausted,
    }
}

/// `dc(e) = 1 + Pois(w_e · (M − dt0(e)))` for each selected element.
pub fn poisson_draw_counts<K: SampleKey>(
    selected: &[ClockedElement<K>],
    horizon: f64,
    seed: u64,
) -> Vec<DrawResult<K>> {
    selected
        .par_iter()
        .map(|e| {
            let mut rng = stream::keyed_rng(seed, COUNT_DOMAIN, &e.key);
            let extra = stream::poisson(&mut rng, e.weight * (horizon - e.dt0).max(0.0));
            DrawResult {
                key: e.key.clone(),
                draw_count: 1 + extra,
            }
        })
        .collect()
}

/// Outcome of drawing one by one up to the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalDraws<K> {
    /// Drawn elements in order of their first draw, with their draw counts.
    pub draws: Vec<DrawResult<K>>,
    pub total_draws: u64,
    /// True when drawing ended because no next draw time was within the
    /// horizon, rather than because the caller stopped it.
    pub horizon_reached: bool,
}

struct NextDraw {
    time: f64,
    index: usize,
}

impl PartialEq for NextDraw {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for NextDraw {}

impl PartialOrd for NextDraw {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NextDraw {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest draw.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Simulates the draws of `selected` one at a time, earliest first, up to
/// `horizon`. Before each draw is emitted, `accept` is asked whether to take
/// it; returning `false` stops the simulation without taking that draw.
///
/// `selected` must be ordered by `(dt0, key)` (as returned by the selection
/// functions) so that equal draw times resolve by key.
pub fn incremental_draws<K: SampleKey>(
    selected: &[ClockedElement<K>],
    horizon: f64,
    seed: u64,
    mut accept: impl FnMut(&K) -> bool,
) -> IncrementalDraws<K> {
    let mut heap: BinaryHeap<NextDraw> = selected
        .iter()
        .enumerate()
        .filter(|(_, e)| e.dt0 <= horizon)
        .map(|(index, e)| NextDraw { time: e.dt0, index })
        .collect();
    let mut rngs: Vec<Option<rand_chacha::ChaCha8Rng>> = vec![None; selected.len()];
    let mut counts: Vec<u64> = vec![0; selected.len()];
    let mut first_order = Vec::new();
    let mut total_draws = 0;
    let mut horizon_reached = true;
    while let Some(next) = heap.pop() {
        let element = &selected[next.index];
        if !accept(&element.key) {
            horizon_reached = false;
            break;
        }
        if counts[next.index] == 0 {
            first_order.push(next.index);
        }
        counts[next.index] += 1;
        total_draws += 1;
        let rng = rngs[next.index]
            .get_or_insert_with(|| stream::keyed_rng(seed, REDRAW_DOMAIN, &element.key));
        let time = next.time + stream::exponential(rng, element.weight);
        if time <= horizon {
            heap.push(NextDraw {
                time,
                index: next.index,
            });
        }
    }
    IncrementalDraws {
        draws: first_order
            .into_iter()
            .map(|i| DrawResult {
                key: selected[i].key.clone(),
                draw_count: counts[i],
            })
            .collect(),
        total_draws,
        horizon_reached,
    }
}
