//! Identifiers, interaction log, item content and popularity scores.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CwhError, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Orders numeric ids numerically and everything else lexicographically
/// after them, so "2" < "10".
fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Bidirectional map between external string ids and dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    /// Builds a map whose dense order is the natural order of the ids.
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let set: BTreeSet<String> = ids.into_iter().collect();
        let mut external: Vec<String> = set.into_iter().collect();
        external.sort_by(|a, b| natural_cmp(a, b));
        let index = external
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        IdMap { external, index }
    }

    /// `0..n` rendered as strings.
    pub fn sequential(n: usize) -> Self {
        Self::from_ids((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    pub fn get(&self, external: &str) -> Option<u32> {
        self.index.get(external).copied()
    }

    pub fn external(&self, dense: u32) -> &str {
        &self.external[dense as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.external.iter().map(String::as_str)
    }

    fn push(&mut self, id: String) -> u32 {
        let dense = self.external.len() as u32;
        self.index.insert(id.clone(), dense);
        self.external.push(id);
        dense
    }
}

/// The set of observed positive (user, item) pairs.
///
/// Pairs are kept sorted by (user, item); each carries the number of raw rows
/// that were collapsed into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionLog {
    users: IdMap,
    items: IdMap,
    pairs: Vec<(UserId, ItemId)>,
    multiplicity: Vec<u32>,
}

impl InteractionLog {
    pub fn new(users: IdMap, items: IdMap, mut rows: Vec<(UserId, ItemId, u32)>) -> Result<Self> {
        rows.sort_unstable_by_key(|&(u, i, _)| (u, i));
        let mut pairs: Vec<(UserId, ItemId)> = Vec::with_capacity(rows.len());
        let mut multiplicity: Vec<u32> = Vec::with_capacity(rows.len());
        for (u, i, c) in rows {
            if u.index() >= users.len() || i.index() >= items.len() {
                return Err(CwhError::Data(format!(
                    "pair ({}, {}) references an unknown id",
                    u.0, i.0
                )));
            }
            if pairs.last() == Some(&(u, i)) {
                *multiplicity.last_mut().unwrap() += c;
            } else {
                pairs.push((u, i));
                multiplicity.push(c);
            }
        }
        Ok(InteractionLog {
            users,
            items,
            pairs,
            multiplicity,
        })
    }

    /// Log over sequential ids `0..n_users` x `0..n_items`, one row per pair.
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (UserId, ItemId)>,
    ) -> Result<Self> {
        Self::new(
            IdMap::sequential(n_users),
            IdMap::sequential(n_items),
            pairs.into_iter().map(|(u, i)| (u, i, 1)).collect(),
        )
    }

    /// Same id maps, different pair set.
    pub fn with_pairs(&self, pairs: impl IntoIterator<Item = (UserId, ItemId)>) -> Self {
        let mut rows: Vec<(UserId, ItemId)> = pairs.into_iter().collect();
        rows.sort_unstable();
        rows.dedup();
        let multiplicity = rows.iter().map(|p| self.multiplicity_of(*p).max(1)).collect();
        InteractionLog {
            users: self.users.clone(),
            items: self.items.clone(),
            pairs: rows,
            multiplicity,
        }
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(UserId, ItemId)] {
        &self.pairs
    }

    pub fn contains(&self, pair: (UserId, ItemId)) -> bool {
        self.pairs.binary_search(&pair).is_ok()
    }

    /// Number of raw rows collapsed into `pair`, 0 if absent.
    pub fn multiplicity_of(&self, pair: (UserId, ItemId)) -> u32 {
        self.pairs
            .binary_search(&pair)
            .map(|k| self.multiplicity[k])
            .unwrap_or(0)
    }

    /// Raw consumption count per item (sum of multiplicities).
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_items()];
        for (&(_, i), &c) in self.pairs.iter().zip(&self.multiplicity) {
            counts[i.index()] += u64::from(c);
        }
        counts
    }

    /// Sorted item lists per user.
    pub fn user_items(&self) -> Vec<Vec<ItemId>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for &(u, i) in &self.pairs {
            out[u.index()].push(i);
        }
        out
    }

    /// Appends items that have no interactions (e.g. content-only items).
    pub(crate) fn extend_items(&mut self, ids: impl IntoIterator<Item = String>) {
        for id in ids {
            if self.items.get(&id).is_none() {
                self.items.push(id);
            }
        }
    }

    /// Writes the log as an interactions CSV (`user_id,item_id`), one row per
    /// raw interaction.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| CwhError::Data(e.to_string());
        w.write_record(["user_id", "item_id"]).map_err(err)?;
        for (&(u, i), &c) in self.pairs.iter().zip(&self.multiplicity) {
            for _ in 0..c {
                w.write_record([self.users.external(u.0), self.items.external(i.0)])
                    .map_err(err)?;
            }
        }
        w.flush().map_err(|e| CwhError::Data(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    /// Rows whose rating is below this are dropped; ignored when the file has
    /// no `rating` column.
    pub rating_threshold: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            rating_threshold: 3.5,
        }
    }
}

fn parse_err(file: &str, record: &csv::StringRecord, message: impl Into<String>) -> CwhError {
    CwhError::Parse {
        file: file.to_string(),
        line: record.position().map(|p| p.line()).unwrap_or(0),
        message: message.into(),
    }
}

fn csv_err(file: &str, e: csv::Error) -> CwhError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    CwhError::Parse {
        file: file.to_string(),
        line,
        message: e.to_string(),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Reads an interactions CSV with header `user_id,item_id[,rating][,timestamp]`.
pub fn read_interactions<R: Read>(reader: R, name: &str, opts: &IngestOptions) -> Result<InteractionLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(name, e))?.clone();
    let (Some(user_col), Some(item_col)) = (column(&headers, "user_id"), column(&headers, "item_id"))
    else {
        return Err(CwhError::Parse {
            file: name.to_string(),
            line: 1,
            message: "header must contain user_id and item_id".into(),
        });
    };
    let rating_col = column(&headers, "rating");

    let mut raw: Vec<(String, String)> = Vec::new();
    let mut rows_seen = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(name, e))?;
        rows_seen += 1;
        let user = record.get(user_col).unwrap_or("").trim();
        let item = record.get(item_col).unwrap_or("").trim();
        if user.is_empty() || item.is_empty() {
            return Err(parse_err(name, &record, "empty user_id or item_id"));
        }
        if let Some(rc) = rating_col {
            let cell = record.get(rc).unwrap_or("").trim();
            let rating: f64 = cell
                .parse()
                .map_err(|_| parse_err(name, &record, format!("bad rating {cell:?}")))?;
            if rating < opts.rating_threshold {
                continue;
            }
        }
        raw.push((user.to_string(), item.to_string()));
    }
    if rows_seen == 0 {
        return Err(CwhError::Data(format!("{name}: no interaction rows")));
    }
    if raw.is_empty() {
        return Err(CwhError::Data(format!(
            "{name}: no rows pass the rating threshold {}",
            opts.rating_threshold
        )));
    }
    let users = IdMap::from_ids(raw.iter().map(|(u, _)| u.clone()));
    let items = IdMap::from_ids(raw.iter().map(|(_, i)| i.clone()));
    let rows = raw
        .iter()
        .map(|(u, i)| (UserId(users.get(u).unwrap()), ItemId(items.get(i).unwrap()), 1))
        .collect();
    InteractionLog::new(users, items, rows)
}

pub fn ingest_interactions(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CwhError::io(path, e))?;
    read_interactions(file, &path.display().to_string(), opts)
}

/// Raw content fields of one item.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContentBundle {
    pub tags: BTreeSet<String>,
    pub text: String,
    pub numeric: Vec<f64>,
}

impl ContentBundle {
    pub fn is_empty(&self) -> bool {
        self.tags.is_empty() && self.text.trim().is_empty() && self.numeric.is_empty()
    }
}

/// Content keyed by external item id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContentCatalog {
    entries: BTreeMap<String, ContentBundle>,
}

impl ContentCatalog {
    pub fn insert(&mut self, item: impl Into<String>, content: ContentBundle) {
        self.entries.insert(item.into(), content);
    }

    pub fn get(&self, item: &str) -> Option<&ContentBundle> {
        self.entries.get(item)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ContentBundle)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Writes `item_id,tags,text,numeric`, rows in natural id order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| CwhError::Data(e.to_string());
        w.write_record(["item_id", "tags", "text", "numeric"]).map_err(err)?;
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort_by(|a, b| natural_cmp(a, b));
        for id in ids {
            let c = &self.entries[id];
            let tags = c.tags.iter().cloned().collect::<Vec<_>>().join("|");
            let numeric = c
                .numeric
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("|");
            w.write_record([id.as_str(), &tags, &c.text, &numeric])
                .map_err(err)?;
        }
        w.flush().map_err(|e| CwhError::Data(e.to_string()))?;
        Ok(())
    }
}

/// Reads a content CSV with header `item_id,tags,text,numeric`.
pub fn read_content<R: Read>(reader: R, name: &str) -> Result<ContentCatalog> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(name, e))?.clone();
    let item_col = column(&headers, "item_id").ok_or_else(|| CwhError::Parse {
        file: name.to_string(),
        line: 1,
        message: "header must contain item_id".into(),
    })?;
    let tags_col = column(&headers, "tags");
    let text_col = column(&headers, "text");
    let numeric_col = column(&headers, "numeric");

    let mut catalog = ContentCatalog::default();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(name, e))?;
        let item = record.get(item_col).unwrap_or("").trim();
        if item.is_empty() {
            return Err(parse_err(name, &record, "empty item_id"));
        }
        let cell = |c: Option<usize>| c.and_then(|c| record.get(c)).unwrap_or("");
        let tags: BTreeSet<String> = cell(tags_col)
            .split('|')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        let text = cell(text_col).to_string();
        let numeric = cell(numeric_col)
            .split('|')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(name, &record, format!("bad numeric value {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let bundle = ContentBundle { tags, text, numeric };
        if bundle.is_empty() {
            return Err(parse_err(name, &record, format!("item {item} has no content")));
        }
        if catalog.entries.insert(item.to_string(), bundle).is_some() {
            return Err(parse_err(name, &record, format!("duplicate content row for {item}")));
        }
    }
    if catalog.is_empty() {
        return Err(CwhError::Data(format!("{name}: no content rows")));
    }
    Ok(catalog)
}

pub fn ingest_content(path: impl AsRef<Path>) -> Result<ContentCatalog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CwhError::io(path, e))?;
    read_content(file, &path.display().to_string())
}

/// Interaction log aligned with per-item content.
///
/// Items that have content but no interactions are appended after the
/// interacted items, so ids stay dense.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub log: InteractionLog,
    pub content: Vec<ContentBundle>,
}

impl Dataset {
    /// Joins a log with its content catalog; every interacted item must have
    /// a content row.
    pub fn assemble(mut log: InteractionLog, catalog: &ContentCatalog) -> Result<Self> {
        for item in log.items().iter() {
            if catalog.get(item).is_none() {
                return Err(CwhError::Data(format!("item {item} has no content row")));
            }
        }
        let mut extra: Vec<String> = catalog
            .iter()
            .map(|(k, _)| k.to_string())
            .filter(|k| log.items().get(k).is_none())
            .collect();
        extra.sort_by(|a, b| natural_cmp(a, b));
        log.extend_items(extra);
        let content = log
            .items()
            .iter()
            .map(|id| catalog.get(id).cloned().unwrap())
            .collect();
        Ok(Dataset { log, content })
    }

    /// Dataset with no content at all (CF-only use).
    pub fn without_content(log: InteractionLog) -> Self {
        let content = vec![ContentBundle::default(); log.n_items()];
        Dataset { log, content }
    }

    pub fn has_content(&self) -> bool {
        self.content.iter().any(|c| !c.is_empty())
    }

    pub fn n_items(&self) -> usize {
        self.log.n_items()
    }

    pub fn n_users(&self) -> usize {
        self.log.n_users()
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopularityMode {
    MinmaxCount,
    MinmaxLogcount,
    #[default]
    ConstantHalf,
}

impl std::str::FromStr for PopularityMode {
    type Err = CwhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax-count" => Ok(PopularityMode::MinmaxCount),
            "minmax-logcount" => Ok(PopularityMode::MinmaxLogcount),
            "constant-half" => Ok(PopularityMode::ConstantHalf),
            other => Err(CwhError::Config(format!("unknown popularity mode {other:?}"))),
        }
    }
}

/// Normalized popularity `c_j` in `[0, 1]` plus the raw counts it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PopularityTable {
    scores: Vec<f64>,
    counts: Vec<u64>,
}

impl PopularityTable {
    pub fn from_counts(counts: Vec<u64>, mode: PopularityMode) -> Self {
        let transformed: Vec<f64> = match mode {
            PopularityMode::MinmaxCount => counts.iter().map(|&c| c as f64).collect(),
            PopularityMode::MinmaxLogcount => counts.iter().map(|&c| (c as f64).ln_1p()).collect(),
            PopularityMode::ConstantHalf => {
                let scores = vec![0.5; counts.len()];
                return PopularityTable { scores, counts };
            }
        };
        let lo = transformed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = transformed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scores = if counts.is_empty() || hi <= lo {
            vec![0.5; counts.len()]
        } else {
            transformed.iter().map(|&x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        };
        PopularityTable { scores, counts }
    }

    pub fn score(&self, item: ItemId) -> f64 {
        self.scores[item.index()]
    }

    pub fn count(&self, item: ItemId) -> u64 {
        self.counts[item.index()]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Items sorted by ascending raw count, ties by ascending id.
    pub fn ascending_rank(&self) -> Vec<ItemId> {
        let mut items: Vec<ItemId> = (0..self.len() as u32).map(ItemId).collect();
        items.sort_by_key(|&i| (self.counts[i.index()], i));
        items
    }

    /// The `r` most popular items (descending count, ties by ascending id).
    pub fn top(&self, r: usize) -> Vec<ItemId> {
        let mut items: Vec<ItemId> = (0..self.len() as u32).map(ItemId).collect();
        items.sort_by_key(|&i| (std::cmp::Reverse(self.counts[i.index()]), i));
        items.truncate(r);
        items
    }
}

pub fn build_popularity(log: &InteractionLog, mode: PopularityMode) -> Result<PopularityTable> {
    if log.is_empty() {
        return Err(CwhError::Precondition("popularity of an empty log".into()));
    }
    Ok(PopularityTable::from_counts(log.item_counts(), mode))
}
