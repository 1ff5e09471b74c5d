//! Dataset ingestion, the temporal global split, cold-start and minimum-count
//! filtering, dense id indexing, and negative / candidate sampling.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Explicit,
    Implicit,
}

/// One observed user-item event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSet {
    pub interactions: Vec<Interaction>,
    pub kind: FeedbackKind,
}

impl InteractionSet {
    pub fn new(interactions: Vec<Interaction>, kind: FeedbackKind) -> Self {
        InteractionSet { interactions, kind }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn distinct_users(&self) -> usize {
        self.interactions.iter().map(|x| x.user.as_str()).collect::<HashSet<_>>().len()
    }

    pub fn distinct_items(&self) -> usize {
        self.interactions.iter().map(|x| x.item.as_str()).collect::<HashSet<_>>().len()
    }

    fn with(&self, interactions: Vec<Interaction>) -> Self {
        InteractionSet {
            interactions,
            kind: self.kind,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// `user \t item \t rating \t timestamp`
    Ml100k,
    /// `user::item::rating::timestamp`
    Ml1m,
    /// header `user,item,rating,timestamp`; rating optional
    Csv,
    /// session views: `sessionId,userId,itemId,timeframe,eventdate`
    Diginetica,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml100k" | "ml-100k" => Ok(DatasetFormat::Ml100k),
            "ml1m" | "ml-1m" => Ok(DatasetFormat::Ml1m),
            "csv" => Ok(DatasetFormat::Csv),
            "diginetica" => Ok(DatasetFormat::Diginetica),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a rating file. Input order is preserved.
pub fn load_interactions(path: &Path, format: DatasetFormat) -> Result<InteractionSet> {
    match format {
        DatasetFormat::Ml100k => load_delimited(path, "\t"),
        DatasetFormat::Ml1m => load_delimited(path, "::"),
        DatasetFormat::Csv => load_csv(path),
        DatasetFormat::Diginetica => load_diginetica_views(path, &DigineticaWindow::default()),
    }
}

fn parse_record(
    path: &Path,
    line: usize,
    user: &str,
    item: &str,
    rating: Option<&str>,
    timestamp: &str,
    scale: Option<(f64, f64)>,
) -> Result<Interaction> {
    let user = user.trim();
    let item = item.trim();
    if user.is_empty() || item.is_empty() {
        return Err(parse_err(path, line, "empty user or item id"));
    }
    let rating = match rating {
        Some(r) => {
            let r: f64 = r
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad rating `{r}`")))?;
            if !r.is_finite() {
                return Err(parse_err(path, line, "non-finite rating"));
            }
            if let Some((lo, hi)) = scale {
                if r < lo || r > hi {
                    return Err(parse_err(path, line, format!("rating {r} outside [{lo}, {hi}]")));
                }
            }
            r
        }
        None => 1.0,
    };
    let timestamp: i64 = timestamp
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad timestamp `{timestamp}`")))?;
    if timestamp < 0 {
        return Err(parse_err(path, line, "negative timestamp"));
    }
    Ok(Interaction {
        user: user.to_string(),
        item: item.to_string(),
        rating,
        timestamp,
    })
}

const STAR_SCALE: Option<(f64, f64)> = Some((1.0, 5.0));

fn load_delimited(path: &Path, sep: &str) -> Result<InteractionSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        out.push(parse_record(
            path,
            lineno,
            fields[0],
            fields[1],
            Some(fields[2]),
            fields[3],
            STAR_SCALE,
        )?);
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "empty dataset"));
    }
    Ok(InteractionSet::new(out, FeedbackKind::Explicit))
}

fn header_position(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn require_column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    header_position(headers, name)
        .ok_or_else(|| parse_err(path, 1, format!("missing required column `{name}`")))
}

fn load_csv(path: &Path) -> Result<InteractionSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let headers = reader.headers()?.clone();
    let user_col = require_column(path, &headers, "user")?;
    let item_col = require_column(path, &headers, "item")?;
    let ts_col = require_column(path, &headers, "timestamp")?;
    let rating_col = header_position(&headers, "rating");
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| {
            record
                .get(c)
                .ok_or_else(|| parse_err(path, line, format!("missing field {c}")))
        };
        let rating = match rating_col {
            Some(c) => Some(field(c)?),
            None => None,
        };
        out.push(parse_record(
            path,
            line,
            field(user_col)?,
            field(item_col)?,
            rating,
            field(ts_col)?,
            None,
        )?);
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "empty dataset"));
    }
    let kind = if rating_col.is_some() {
        FeedbackKind::Explicit
    } else {
        FeedbackKind::Implicit
    };
    Ok(InteractionSet::new(out, kind))
}

/// Inclusive date window applied to session views before attribution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigineticaWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Default for DigineticaWindow {
    fn default() -> Self {
        DigineticaWindow {
            start: NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2016, 6, 1).expect("valid date"),
        }
    }
}

/// Seconds since the Unix epoch at midnight of `date`.
pub fn date_to_timestamp(date: NaiveDate) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    (date - epoch).num_days() * 86_400
}

/// Loads session view logs. Every session is attributed to the last user id
/// observed in it (in time order); sessions without any user id are dropped.
pub fn load_diginetica_views(path: &Path, window: &DigineticaWindow) -> Result<InteractionSet> {
    let first_line = {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut line = String::new();
        BufReader::new(file)
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        line
    };
    let delimiter = if first_line.contains(';') { b';' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let headers = reader.headers()?.clone();
    let session_col = require_column(path, &headers, "sessionId")?;
    let user_col = require_column(path, &headers, "userId")?;
    let item_col = require_column(path, &headers, "itemId")?;
    let frame_col = require_column(path, &headers, "timeframe")?;
    let date_col = require_column(path, &headers, "eventdate")?;

    struct View {
        session: String,
        user: Option<String>,
        item: String,
        timestamp: i64,
    }

    let mut views = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| {
            record
                .get(c)
                .map(str::trim)
                .ok_or_else(|| parse_err(path, line, format!("missing field {c}")))
        };
        let date = NaiveDate::parse_from_str(field(date_col)?, "%Y-%m-%d")
            .map_err(|e| parse_err(path, line, format!("bad eventdate: {e}")))?;
        if date < window.start || date > window.end {
            continue;
        }
        let frame: i64 = field(frame_col)?
            .parse()
            .map_err(|_| parse_err(path, line, "bad timeframe"))?;
        if frame < 0 {
            return Err(parse_err(path, line, "negative timeframe"));
        }
        let user = field(user_col)?;
        let item = field(item_col)?;
        if item.is_empty() {
            return Err(parse_err(path, line, "empty itemId"));
        }
        views.push(View {
            session: field(session_col)?.to_string(),
            user: (!user.is_empty() && user != "NA").then(|| user.to_string()),
            item: item.to_string(),
            timestamp: date_to_timestamp(date) + frame / 1000,
        });
    }

    // Last user id per session, in time order with file order breaking ties.
    let mut last_user: HashMap<&str, (i64, usize, &str)> = HashMap::new();
    for (pos, v) in views.iter().enumerate() {
        if let Some(u) = &v.user {
            let key = (v.timestamp, pos);
            let entry = last_user.entry(v.session.as_str()).or_insert((key.0, key.1, u));
            if (key.0, key.1) >= (entry.0, entry.1) {
                *entry = (key.0, key.1, u);
            }
        }
    }
    let interactions = views
        .iter()
        .filter_map(|v| {
            last_user.get(v.session.as_str()).map(|&(_, _, u)| Interaction {
                user: u.to_string(),
                item: v.item.clone(),
                rating: 1.0,
                timestamp: v.timestamp,
            })
        })
        .collect();
    Ok(InteractionSet::new(interactions, FeedbackKind::Implicit))
}

/// Train / validation / test subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: InteractionSet,
    pub validation: InteractionSet,
    pub test: InteractionSet,
}

fn sorted_by_time(set: &InteractionSet) -> Vec<Interaction> {
    let mut sorted = set.interactions.clone();
    // stable: ties keep input order
    sorted.sort_by_key(|x| x.timestamp);
    sorted
}

/// Sorts by timestamp and cuts `⌊train_frac·n⌋` for provisional training; the
/// last `⌊val_frac·|provisional|⌋` of those become validation.
pub fn temporal_global_split(set: &InteractionSet, train_frac: f64, val_frac: f64) -> Result<Split> {
    if set.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "temporal split needs at least 5 interactions, got {}",
            set.len()
        )));
    }
    if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) {
        return Err(Error::InvalidArgument("split fractions must lie in [0, 1]".into()));
    }
    let mut sorted = sorted_by_time(set);
    let n = sorted.len();
    let provisional = (train_frac * n as f64).floor() as usize;
    let test = sorted.split_off(provisional);
    let n_val = (val_frac * provisional as f64).floor() as usize;
    let validation = sorted.split_off(provisional - n_val);
    Ok(Split {
        train: set.with(sorted),
        validation: set.with(validation),
        test: set.with(test),
    })
}

/// Calendar split: `[.., val_start)` train, `[val_start, test_start)`
/// validation, `[test_start, ..]` test. Timestamps in seconds.
pub fn date_split(set: &InteractionSet, val_start: i64, test_start: i64) -> Result<Split> {
    if val_start > test_start {
        return Err(Error::InvalidArgument("validation must start before test".into()));
    }
    let sorted = sorted_by_time(set);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for x in sorted {
        if x.timestamp < val_start {
            train.push(x);
        } else if x.timestamp < test_start {
            validation.push(x);
        } else {
            test.push(x);
        }
    }
    Ok(Split {
        train: set.with(train),
        validation: set.with(validation),
        test: set.with(test),
    })
}

/// Drops subset rows whose user or item never occurs in `train`.
pub fn filter_cold_start(train: &InteractionSet, subset: &InteractionSet) -> InteractionSet {
    let users: HashSet<&str> = train.interactions.iter().map(|x| x.user.as_str()).collect();
    let items: HashSet<&str> = train.interactions.iter().map(|x| x.item.as_str()).collect();
    subset.with(
        subset
            .interactions
            .iter()
            .filter(|x| users.contains(x.user.as_str()) && items.contains(x.item.as_str()))
            .cloned()
            .collect(),
    )
}

/// Removes, from every subset, users with fewer than `min_count` training
/// interactions.
pub fn filter_min_user_interactions(split: &Split, min_count: usize) -> Split {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for x in &split.train.interactions {
        *counts.entry(x.user.as_str()).or_default() += 1;
    }
    let keep = |set: &InteractionSet| {
        set.with(
            set.interactions
                .iter()
                .filter(|x| counts.get(x.user.as_str()).copied().unwrap_or(0) >= min_count)
                .cloned()
                .collect(),
        )
    };
    Split {
        train: keep(&split.train),
        validation: keep(&split.validation),
        test: keep(&split.test),
    }
}

/// Applies cold-start filtering to validation and test.
pub fn apply_cold_start(split: &Split) -> Split {
    Split {
        train: split.train.clone(),
        validation: filter_cold_start(&split.train, &split.validation),
        test: filter_cold_start(&split.train, &split.test),
    }
}

/// Interaction with dense user and item indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexedInteraction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// Dense id maps plus per-user interacted-item sets.
#[derive(Clone, Debug, PartialEq)]
pub struct UserItemIndex {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
    /// Sorted, deduplicated training items per user.
    train_items: Vec<Vec<usize>>,
    /// Sorted, deduplicated items per user over every indexed subset.
    all_items: Vec<Vec<usize>>,
}

impl UserItemIndex {
    /// Ids are assigned in first-appearance order over `train`; interacted
    /// sets cover `train` plus every `extra` subset. Extra rows with ids
    /// unknown to the training subset are ignored.
    pub fn build(train: &InteractionSet, extra: &[&InteractionSet]) -> Self {
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut user_lookup = HashMap::new();
        let mut item_lookup = HashMap::new();
        for x in &train.interactions {
            user_lookup.entry(x.user.clone()).or_insert_with(|| {
                user_ids.push(x.user.clone());
                user_ids.len() - 1
            });
            item_lookup.entry(x.item.clone()).or_insert_with(|| {
                item_ids.push(x.item.clone());
                item_ids.len() - 1
            });
        }
        let mut train_items = vec![Vec::new(); user_ids.len()];
        for x in &train.interactions {
            train_items[user_lookup[&x.user]].push(item_lookup[&x.item]);
        }
        let mut all_items = train_items.clone();
        for set in extra {
            for x in &set.interactions {
                if let (Some(&u), Some(&i)) = (user_lookup.get(&x.user), item_lookup.get(&x.item)) {
                    all_items[u].push(i);
                }
            }
        }
        for list in train_items.iter_mut().chain(all_items.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        UserItemIndex {
            user_ids,
            item_ids,
            user_lookup,
            item_lookup,
            train_items,
            all_items,
        }
    }

    /// Rebuilds an index from stored id lists (e.g. a checkpoint); interacted
    /// sets are empty.
    pub fn from_ids(user_ids: Vec<String>, item_ids: Vec<String>) -> Result<Self> {
        let user_lookup: HashMap<String, usize> =
            user_ids.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let item_lookup: HashMap<String, usize> =
            item_ids.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        if user_lookup.len() != user_ids.len() || item_lookup.len() != item_ids.len() {
            return Err(Error::InvalidArgument("duplicate ids in id list".into()));
        }
        Ok(UserItemIndex {
            train_items: vec![Vec::new(); user_ids.len()],
            all_items: vec![Vec::new(); user_ids.len()],
            user_ids,
            item_ids,
            user_lookup,
            item_lookup,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_lookup.get(id).copied()
    }

    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_items[user]
    }

    pub fn interacted_items(&self, user: usize) -> &[usize] {
        &self.all_items[user]
    }

    /// Maps every interaction to dense indices; unknown ids are an error.
    pub fn encode(&self, set: &InteractionSet) -> Result<Vec<IndexedInteraction>> {
        set.interactions
            .iter()
            .map(|x| {
                let user = self.user_index(&x.user).ok_or_else(|| Error::UnknownId {
                    kind: "user",
                    id: x.user.clone(),
                })?;
                let item = self.item_index(&x.item).ok_or_else(|| Error::UnknownId {
                    kind: "item",
                    id: x.item.clone(),
                })?;
                Ok(IndexedInteraction {
                    user,
                    item,
                    rating: x.rating,
                })
            })
            .collect()
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.num_users() {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                size: self.num_users(),
            });
        }
        Ok(())
    }
}

/// Draws one item the user has not interacted with in training.
pub fn sample_negative(index: &UserItemIndex, user: usize, rng: &mut SeededRng) -> Result<usize> {
    index.check_user(user)?;
    let seen = index.train_items(user);
    let n = index.num_items();
    if seen.len() >= n {
        return Err(Error::Sampling(format!(
            "user {user} interacted with all {n} items"
        )));
    }
    if seen.len() * 2 <= n {
        loop {
            let candidate = rng.index(n);
            if seen.binary_search(&candidate).is_err() {
                return Ok(candidate);
            }
        }
    }
    let pick = rng.index(n - seen.len());
    Ok(complement(seen, n).nth(pick).expect("pick within complement"))
}

/// Items of `0..n` not in the sorted slice `excluded`, ascending.
fn complement(excluded: &[usize], n: usize) -> impl Iterator<Item = usize> + '_ {
    (0..n).filter(move |i| excluded.binary_search(i).is_err())
}

/// Evaluation candidate list, or the signal that too few negatives exist.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Candidates {
    /// The positive item first, then the sampled negatives.
    Ranked(Vec<usize>),
    Insufficient { available: usize },
}

/// Positive item plus `k` distinct negatives drawn from items the user never
/// interacted with in any indexed subset.
pub fn sample_eval_candidates(
    index: &UserItemIndex,
    user: usize,
    positive: usize,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Candidates> {
    index.check_user(user)?;
    let n = index.num_items();
    if positive >= n {
        return Err(Error::IndexOutOfRange {
            what: "item",
            index: positive,
            size: n,
        });
    }
    let seen = index.interacted_items(user);
    let positive_extra = usize::from(seen.binary_search(&positive).is_err());
    let available = n - seen.len() - positive_extra;
    if available < k {
        return Ok(Candidates::Insufficient { available });
    }
    let mut out = Vec::with_capacity(k + 1);
    out.push(positive);
    if available >= 4 * k {
        let mut chosen = HashSet::with_capacity(k);
        while chosen.len() < k {
            let c = rng.index(n);
            if c != positive && seen.binary_search(&c).is_err() && chosen.insert(c) {
                out.push(c);
            }
        }
    } else {
        let mut pool: Vec<usize> = complement(seen, n).filter(|&c| c != positive).collect();
        for i in 0..k {
            let j = i + rng.index(pool.len() - i);
            pool.swap(i, j);
        }
        out.extend_from_slice(&pool[..k]);
    }
    Ok(Candidates::Ranked(out))
}

/// Filtered subsets, their dense encodings and the index.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: Split,
    pub index: UserItemIndex,
    pub train: Vec<IndexedInteraction>,
    pub validation: Vec<IndexedInteraction>,
    pub test: Vec<IndexedInteraction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// `|train| / (users · items)`
    pub density: f64,
}

impl PreparedData {
    /// Cold-start filters the split, builds the index over all subsets, and
    /// encodes every subset.
    pub fn from_split(split: &Split) -> Result<Self> {
        let split = apply_cold_start(split);
        if split.train.is_empty() {
            return Err(Error::InvalidArgument("empty training subset".into()));
        }
        let index = UserItemIndex::build(&split.train, &[&split.validation, &split.test]);
        let train = index.encode(&split.train)?;
        let validation = index.encode(&split.validation)?;
        let test = index.encode(&split.test)?;
        Ok(PreparedData {
            split,
            index,
            train,
            validation,
            test,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        let users = self.index.num_users();
        let items = self.index.num_items();
        DatasetStats {
            users,
            items,
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
            density: self.train.len() as f64 / (users as f64 * items as f64),
        }
    }
}
