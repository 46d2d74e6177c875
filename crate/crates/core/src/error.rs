use std::path::PathBuf;

use crate::model::Side;

/// Errors raised by the evaluation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("item {item:?} has invalid weight {weight}")]
    InvalidWeight { item: String, weight: f64 },
    #[error("item {item:?} has no {side} cluster assignment")]
    MissingAssignment { item: String, side: Side },
    #[error("item {0:?} has no weight")]
    MissingWeight(String),
    #[error("the two clusterings have no items in common")]
    EmptyPopulation,
    #[error("weight maps cover different item sets ({only_left} only on the left, {only_right} only on the right)")]
    KeyMismatch { only_left: usize, only_right: usize },
    #[error("unknown item {0:?}")]
    NotFound(String),
    #[error("slice is empty")]
    EmptySlice,
    #[error("sample is empty")]
    EmptySample,
    #[error("the clusterings do not differ; there is nothing to sample")]
    NoDiff,
    #[error("pair ({vantage:?}, {other:?}) is not in the pair population")]
    NotInPopulation { vantage: String, other: String },
    #[error("no judged pairs are available")]
    NoJudgements,
    #[error("invalid attribute {name:?} on item {item:?}: {reason}")]
    InvalidAttribute {
        item: String,
        name: String,
        reason: String,
    },
    #[error("invalid filter expression {expr:?}: {reason}")]
    InvalidFilter { expr: String, reason: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
