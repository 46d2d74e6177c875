//! Item population, the two clusterings over it, and weight derivation.
//!
//! A [`Dataset`] is immutable once built. Items are stored sorted by id and
//! clusters sorted by cluster id, so every derived quantity is independent
//! of input order and of how the input was sharded.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Item-id keyed map with deterministic iteration order.
pub type IdMap<V> = BTreeMap<String, V>;

/// Flat attribute map used for slicing.
pub type Attributes = BTreeMap<String, AttrValue>;

/// Default cap on the number of removed ids kept by [`restrict_to_common`].
pub const DEFAULT_REMOVED_SAMPLE_CAP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Base,
    Exp,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Base => "base",
            Side::Exp => "exp",
        })
    }
}

/// Scalar attribute value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Num(n) => Some(*n),
            _ => None,
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Num(n) => write!(f, "{n}"),
            AttrValue::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub weight: f64,
    #[serde(rename = "base_cluster")]
    pub base_cluster_id: String,
    #[serde(rename = "exp_cluster")]
    pub exp_cluster_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: Attributes,
}

impl ItemRecord {
    pub fn new(
        item_id: impl Into<String>,
        weight: f64,
        base_cluster_id: impl Into<String>,
        exp_cluster_id: impl Into<String>,
    ) -> Self {
        Self {
            item_id: item_id.into(),
            weight,
            base_cluster_id: base_cluster_id.into(),
            exp_cluster_id: exp_cluster_id.into(),
            attributes: Attributes::new(),
        }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: AttrValue) -> Self {
        self.attributes.insert(name.into(), value);
        self
    }

    pub fn cluster_id(&self, side: Side) -> &str {
        match side {
            Side::Base => &self.base_cluster_id,
            Side::Exp => &self.exp_cluster_id,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cluster {
    id: String,
    members: Vec<usize>,
    weight: f64,
}

impl Cluster {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Member item indices, ascending.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// One side's partition of the items.
#[derive(Clone, Debug)]
pub struct Clustering {
    clusters: Vec<Cluster>,
    by_id: HashMap<String, usize>,
    assignment: Vec<usize>,
}

impl Clustering {
    fn build(items: &[ItemRecord], side: Side) -> Self {
        let mut grouped: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (idx, item) in items.iter().enumerate() {
            grouped.entry(item.cluster_id(side)).or_default().push(idx);
        }
        let mut assignment = vec![0; items.len()];
        let mut by_id = HashMap::with_capacity(grouped.len());
        let clusters = grouped
            .into_iter()
            .enumerate()
            .map(|(cidx, (id, members))| {
                for &m in &members {
                    assignment[m] = cidx;
                }
                by_id.insert(id.to_owned(), cidx);
                let weights: Vec<f64> = members.iter().map(|&m| items[m].weight).collect();
                Cluster {
                    id: id.to_owned(),
                    weight: pairwise_sum(&weights),
                    members,
                }
            })
            .collect();
        Self {
            clusters,
            by_id,
            assignment,
        }
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, index: usize) -> &Cluster {
        &self.clusters[index]
    }

    pub fn cluster_by_id(&self, id: &str) -> Option<&Cluster> {
        self.by_id.get(id).map(|&i| &self.clusters[i])
    }

    /// Index of the cluster containing item `item`.
    pub fn cluster_index_of(&self, item: usize) -> usize {
        self.assignment[item]
    }

    pub fn cluster_of(&self, item: usize) -> &Cluster {
        &self.clusters[self.assignment[item]]
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Items shared by one Base cluster and one Exp cluster.
///
/// Every item in an overlap has the same Base and Exp cluster, hence the same
/// impact metrics and the same pair neighbourhood.
#[derive(Clone, Debug)]
pub struct Overlap {
    base: usize,
    exp: usize,
    members: Vec<usize>,
    weight: f64,
}

impl Overlap {
    pub fn base_cluster(&self) -> usize {
        self.base
    }

    pub fn exp_cluster(&self) -> usize {
        self.exp
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// Validated pair of clusterings over a common weighted item set.
#[derive(Clone, Debug)]
pub struct Dataset {
    items: Vec<ItemRecord>,
    index: HashMap<String, usize>,
    base: Clustering,
    exp: Clustering,
    overlaps: Vec<Overlap>,
    overlap_of: Vec<usize>,
    total_weight: f64,
}

impl Dataset {
    /// Validates the records and builds the indexes. Input order is irrelevant.
    pub fn from_records(mut items: Vec<ItemRecord>) -> Result<Self> {
        for item in &items {
            validate_record(item)?;
        }
        if items.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        if let Some(w) = items.windows(2).find(|w| w[0].item_id == w[1].item_id) {
            return Err(Error::DuplicateItem(w[0].item_id.clone()));
        }
        let index = items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.item_id.clone(), i))
            .collect();
        let base = Clustering::build(&items, Side::Base);
        let exp = Clustering::build(&items, Side::Exp);

        let mut overlaps = Vec::new();
        let mut overlap_of = vec![0; items.len()];
        for (bidx, cluster) in base.clusters.iter().enumerate() {
            let mut by_exp: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &m in &cluster.members {
                by_exp.entry(exp.assignment[m]).or_default().push(m);
            }
            for (eidx, members) in by_exp {
                for &m in &members {
                    overlap_of[m] = overlaps.len();
                }
                let weights: Vec<f64> = members.iter().map(|&m| items[m].weight).collect();
                overlaps.push(Overlap {
                    base: bidx,
                    exp: eidx,
                    weight: pairwise_sum(&weights),
                    members,
                });
            }
        }
        let weights: Vec<f64> = items.iter().map(|i| i.weight).collect();
        let total_weight = pairwise_sum(&weights);
        Ok(Self {
            items,
            index,
            base,
            exp,
            overlaps,
            overlap_of,
            total_weight,
        })
    }

    /// Builds a dataset from independently loaded shards.
    pub fn from_shards(shards: impl IntoIterator<Item = Vec<ItemRecord>>) -> Result<Self> {
        Self::from_records(shards.into_iter().flatten().collect())
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn item(&self, index: usize) -> &ItemRecord {
        &self.items[index]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn require_index(&self, item_id: &str) -> Result<usize> {
        self.index_of(item_id)
            .ok_or_else(|| Error::NotFound(item_id.to_owned()))
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.items[index].weight
    }

    pub fn base(&self) -> &Clustering {
        &self.base
    }

    pub fn exp(&self) -> &Clustering {
        &self.exp
    }

    pub fn clustering(&self, side: Side) -> &Clustering {
        match side {
            Side::Base => &self.base,
            Side::Exp => &self.exp,
        }
    }

    pub fn overlaps(&self) -> &[Overlap] {
        &self.overlaps
    }

    /// The overlap `Base(i) ∩ Exp(i)` containing item `index`.
    pub fn overlap_of(&self, index: usize) -> &Overlap {
        &self.overlaps[self.overlap_of[index]]
    }

    pub fn overlap_index_of(&self, index: usize) -> usize {
        self.overlap_of[index]
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Member ids of a cluster, in item order.
    pub fn cluster_members(&self, side: Side, cluster_id: &str) -> Option<Vec<&str>> {
        self.clustering(side).cluster_by_id(cluster_id).map(|c| {
            c.members
                .iter()
                .map(|&m| self.items[m].item_id.as_str())
                .collect()
        })
    }

    pub fn assignments(&self, side: Side) -> IdMap<String> {
        self.items
            .iter()
            .map(|i| (i.item_id.clone(), i.cluster_id(side).to_owned()))
            .collect()
    }

    pub fn weights(&self) -> IdMap<f64> {
        self.items
            .iter()
            .map(|i| (i.item_id.clone(), i.weight))
            .collect()
    }

    /// The same items with the roles of Base and Exp exchanged.
    pub fn swapped(&self) -> Self {
        let items = self
            .items
            .iter()
            .map(|i| ItemRecord {
                base_cluster_id: i.exp_cluster_id.clone(),
                exp_cluster_id: i.base_cluster_id.clone(),
                ..i.clone()
            })
            .collect();
        Self::from_records(items).expect("swapping sides preserves validity")
    }
}

fn validate_record(item: &ItemRecord) -> Result<()> {
    if !(item.weight.is_finite() && item.weight > 0.0) {
        return Err(Error::InvalidWeight {
            item: item.item_id.clone(),
            weight: item.weight,
        });
    }
    for side in [Side::Base, Side::Exp] {
        if item.cluster_id(side).is_empty() {
            return Err(Error::MissingAssignment {
                item: item.item_id.clone(),
                side,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Tsv,
}

impl InputFormat {
    /// `.tsv` files are TSV; everything else is treated as JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => InputFormat::Tsv,
            _ => InputFormat::Jsonl,
        }
    }
}

/// Loads, validates and indexes a clustering file.
pub fn load_dataset(path: &Path, format: InputFormat) -> Result<Dataset> {
    Dataset::from_records(load_records(path, format)?)
}

/// Loads several shards in parallel and merges them.
pub fn load_dataset_shards(paths: &[&Path], format: InputFormat) -> Result<Dataset> {
    let shards = paths
        .par_iter()
        .map(|p| load_records(p, format))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_shards(shards)
}

/// Parses a clustering file into records without building indexes.
pub fn load_records(path: &Path, format: InputFormat) -> Result<Vec<ItemRecord>> {
    match format {
        InputFormat::Jsonl => load_jsonl(path),
        InputFormat::Tsv => load_tsv(path),
    }
}

#[derive(Deserialize)]
struct RawRow {
    item_id: Option<String>,
    weight: Option<f64>,
    base_cluster: Option<String>,
    exp_cluster: Option<String>,
    #[serde(default)]
    attributes: BTreeMap<String, serde_json::Value>,
}

fn load_jsonl(path: &Path) -> Result<Vec<ItemRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            message,
        };
        let row: RawRow = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let item_id = row
            .item_id
            .ok_or_else(|| parse_err("missing item_id".into()))?;
        let weight = row
            .weight
            .ok_or_else(|| Error::MissingWeight(item_id.clone()))?;
        let base = row.base_cluster.ok_or_else(|| Error::MissingAssignment {
            item: item_id.clone(),
            side: Side::Base,
        })?;
        let exp = row.exp_cluster.ok_or_else(|| Error::MissingAssignment {
            item: item_id.clone(),
            side: Side::Exp,
        })?;
        let attributes = flatten_attributes(&item_id, row.attributes)?;
        records.push(ItemRecord {
            item_id,
            weight,
            base_cluster_id: base,
            exp_cluster_id: exp,
            attributes,
        });
    }
    Ok(records)
}

/// Scalars are kept as-is; a list value `name: [a, b]` becomes the boolean
/// flags `name:a = true` and `name:b = true`; nulls are dropped.
fn flatten_attributes(
    item: &str,
    raw: BTreeMap<String, serde_json::Value>,
) -> Result<Attributes> {
    use serde_json::Value;

    let invalid = |name: &str, reason: &str| Error::InvalidAttribute {
        item: item.to_owned(),
        name: name.to_owned(),
        reason: reason.to_owned(),
    };
    let mut out = Attributes::new();
    for (name, value) in raw {
        match value {
            Value::Null => {}
            Value::Bool(b) => {
                out.insert(name, AttrValue::Bool(b));
            }
            Value::Number(n) => {
                let v = n
                    .as_f64()
                    .ok_or_else(|| invalid(&name, "number out of range"))?;
                out.insert(name, AttrValue::Num(v));
            }
            Value::String(s) => {
                out.insert(name, AttrValue::Str(s));
            }
            Value::Array(values) => {
                for v in values {
                    let label = match v {
                        Value::String(s) => s,
                        Value::Bool(b) => b.to_string(),
                        Value::Number(n) => n.to_string(),
                        _ => return Err(invalid(&name, "list elements must be scalars")),
                    };
                    out.insert(format!("{name}:{label}"), AttrValue::Bool(true));
                }
            }
            Value::Object(_) => return Err(invalid(&name, "nested objects are not supported")),
        }
    }
    Ok(out)
}

const TSV_COLUMNS: [&str; 4] = ["item_id", "weight", "base_cluster", "exp_cluster"];

fn load_tsv(path: &Path) -> Result<Vec<ItemRecord>> {
    let csv_err = |line: usize, e: csv::Error| Error::Parse {
        path: path.to_owned(),
        line,
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                path: path.to_owned(),
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers().map_err(|e| csv_err(1, e))?.clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(TSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: path.to_owned(),
                line: 1,
                message: format!("missing column {name:?}"),
            })?;
    }
    let mut records = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| csv_err(line, e))?;
        let field = |c: usize| row.get(cols[c]).unwrap_or("").trim();
        let item_id = field(0).to_owned();
        if item_id.is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                message: "missing item_id".into(),
            });
        }
        let weight_text = field(1);
        if weight_text.is_empty() {
            return Err(Error::MissingWeight(item_id));
        }
        let weight: f64 = weight_text.parse().map_err(|_| Error::Parse {
            path: path.to_owned(),
            line,
            message: format!("weight {weight_text:?} is not a number"),
        })?;
        records.push(ItemRecord::new(item_id, weight, field(2), field(3)));
    }
    Ok(records)
}

/// Outcome of restricting two clusterings to their common items.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RestrictionReport {
    pub common_count: usize,
    pub removed_from_base_count: usize,
    pub removed_from_exp_count: usize,
    pub removed_weight_base: f64,
    pub removed_weight_exp: f64,
    /// A bounded, sorted sample of removed ids for debugging.
    pub sample_removed: Vec<String>,
}

/// Restricts both clusterings to the ids they have in common.
pub fn restrict_to_common(
    base_assignments: &IdMap<String>,
    exp_assignments: &IdMap<String>,
    weights: &IdMap<f64>,
) -> Result<(Dataset, RestrictionReport)> {
    restrict_to_common_with_cap(
        base_assignments,
        exp_assignments,
        weights,
        DEFAULT_REMOVED_SAMPLE_CAP,
    )
}

pub fn restrict_to_common_with_cap(
    base_assignments: &IdMap<String>,
    exp_assignments: &IdMap<String>,
    weights: &IdMap<f64>,
    sample_cap: usize,
) -> Result<(Dataset, RestrictionReport)> {
    let mut report = RestrictionReport::default();
    let mut removed_base = Vec::new();
    let mut removed_exp = Vec::new();
    let mut records = Vec::new();
    for (id, base_cluster) in base_assignments {
        match exp_assignments.get(id) {
            Some(exp_cluster) => {
                let weight = *weights
                    .get(id)
                    .ok_or_else(|| Error::MissingWeight(id.clone()))?;
                records.push(ItemRecord::new(
                    id.clone(),
                    weight,
                    base_cluster.clone(),
                    exp_cluster.clone(),
                ));
            }
            None => removed_base.push(id),
        }
    }
    for id in exp_assignments.keys() {
        if !base_assignments.contains_key(id) {
            removed_exp.push(id);
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let removed_weight = |ids: &[&String]| {
        let ws: Vec<f64> = ids.iter().filter_map(|id| weights.get(*id).copied()).collect();
        pairwise_sum(&ws)
    };
    report.common_count = records.len();
    report.removed_from_base_count = removed_base.len();
    report.removed_from_exp_count = removed_exp.len();
    report.removed_weight_base = removed_weight(&removed_base);
    report.removed_weight_exp = removed_weight(&removed_exp);
    let mut sample: Vec<String> = removed_base
        .iter()
        .chain(&removed_exp)
        .map(|s| (*s).clone())
        .collect();
    sample.sort();
    sample.truncate(sample_cap);
    report.sample_removed = sample;
    Ok((Dataset::from_records(records)?, report))
}

/// Spreads each cluster's past weight over its current members, proportionally
/// to their intrinsic importance. Members without a past weight count as zero.
pub fn propagate_past_weights(
    clustering: &IdMap<String>,
    past_weights: &IdMap<f64>,
    intrinsic: &IdMap<f64>,
) -> Result<IdMap<f64>> {
    let mut clusters: BTreeMap<&str, Vec<(&String, f64, f64)>> = BTreeMap::new();
    for (id, cluster) in clustering {
        let own = *intrinsic
            .get(id)
            .ok_or_else(|| Error::MissingWeight(id.clone()))?;
        if !(own.is_finite() && own > 0.0) {
            return Err(Error::InvalidWeight {
                item: id.clone(),
                weight: own,
            });
        }
        let past = past_weights.get(id).copied().unwrap_or(0.0);
        if !(past.is_finite() && past >= 0.0) {
            return Err(Error::InvalidWeight {
                item: id.clone(),
                weight: past,
            });
        }
        clusters.entry(cluster).or_default().push((id, past, own));
    }
    let mut out = IdMap::new();
    for members in clusters.into_values() {
        let past: Vec<f64> = members.iter().map(|m| m.1).collect();
        let own: Vec<f64> = members.iter().map(|m| m.2).collect();
        let cluster_past = pairwise_sum(&past);
        let cluster_intrinsic = pairwise_sum(&own);
        for (id, _, own) in members {
            out.insert(id.clone(), cluster_past * own / cluster_intrinsic);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    #[default]
    Max,
    Mean,
}

/// Combines per-side weights into one weight per item.
pub fn combine_weights(
    w_base: &IdMap<f64>,
    w_exp: &IdMap<f64>,
    mode: CombineMode,
) -> Result<IdMap<f64>> {
    let only_left = w_base.keys().filter(|k| !w_exp.contains_key(*k)).count();
    let only_right = w_exp.keys().filter(|k| !w_base.contains_key(*k)).count();
    if only_left + only_right > 0 {
        return Err(Error::KeyMismatch {
            only_left,
            only_right,
        });
    }
    Ok(w_base
        .iter()
        .map(|(id, &b)| {
            let e = w_exp[id];
            let w = match mode {
                CombineMode::Max => b.max(e),
                CombineMode::Mean => (b + e) / 2.0,
            };
            (id.clone(), w)
        })
        .collect())
}
