//! Evaluation of the difference between two clusterings of one weighted item
//! population: exact impact metrics, importance-sampled impact exploration
//! and judgement-driven quality estimates.

pub mod error;
pub mod filter;
pub mod impact;
pub mod model;
pub mod numeric;
pub mod pairs;
pub mod quality;
pub mod sampler;

pub use error::{Error, Result};
pub use filter::Filter;
pub use impact::{ImpactReport, ImpactTriple, Metric};
pub use model::{AttrValue, Attributes, Dataset, ItemRecord, Side};
pub use pairs::{CategoryTotals, PairCategory, PairKey, PairSample, WeightedPair};
pub use quality::{Judgement, QualityReport, Verdict};
pub use sampler::{ItemSample, SampledItem};
