//! Interaction logs: ingestion, side features, the leave-last-two split and
//! the sampling transforms used to build compressed training sets.

mod parse;
mod sampling;
mod split;

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

pub use parse::{
    parse_interactions, parse_interactions_from, parse_side_features, parse_side_features_from,
    FeatureSchema, InteractionFormat, MOVIELENS_AGE_CODES, MOVIELENS_GENRES,
};
pub use sampling::{
    item_frequency, oversample_tail, sample_negatives, sample_uniform, undersample_head,
    NegativeSampler, NegativeSet, OVERSAMPLE_CAP,
};
pub use split::{split_leave_last_two, SplitDataset};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("no interactions")]
    Empty,
    #[error("no users with at least 3 interactions; split is empty")]
    EmptySplit,
    #[error("sampling ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("negatives per positive must be at least 1")]
    InvalidNegativeCount,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One logged user-item event. Ingested rows are implicit-feedback positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
    pub label: u8,
}

impl Interaction {
    pub fn positive(user: u32, item: u32, timestamp: i64) -> Self {
        Self {
            user,
            item,
            timestamp,
            label: 1,
        }
    }
}

/// Bijection between raw ids (as they appear in files) and dense indices,
/// assigned in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    dense: HashMap<String, u32>,
    raw: Vec<String>,
}

impl IdMap {
    pub fn get_or_insert(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.dense.get(raw) {
            return id;
        }
        let id = self.raw.len() as u32;
        self.raw.push(raw.to_owned());
        self.dense.insert(raw.to_owned(), id);
        id
    }

    pub fn dense(&self, raw: &str) -> Option<u32> {
        self.dense.get(raw).copied()
    }

    pub fn raw(&self, dense: u32) -> Option<&str> {
        self.raw.get(dense as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Identity map over `0..n` rendered as decimal strings.
    pub fn sequential(n: usize) -> Self {
        let mut map = Self::default();
        for i in 0..n {
            map.get_or_insert(&i.to_string());
        }
        map
    }
}

/// Dense per-entity feature vectors of uniform width (possibly zero).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureTable {
    pub fn empty() -> Self {
        Self {
            dim: 0,
            data: Vec::new(),
        }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn from_vec(n: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(DatasetError::Invalid(format!(
                "feature table needs {} values, got {}",
                n * dim,
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// The full interaction log with dense id spaces and side features.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    interactions: Vec<Interaction>,
    n_users: usize,
    n_items: usize,
    user_features: FeatureTable,
    item_features: FeatureTable,
    user_ids: IdMap,
    item_ids: IdMap,
}

impl InteractionDataset {
    /// Builds a dataset from already-dense interactions. Id maps are the
    /// identity over `0..n_users` and `0..n_items`; features are empty.
    pub fn from_interactions(
        interactions: Vec<Interaction>,
        n_users: usize,
        n_items: usize,
    ) -> Result<Self> {
        if interactions.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (row, it) in interactions.iter().enumerate() {
            if it.user as usize >= n_users || it.item as usize >= n_items {
                return Err(DatasetError::Invalid(format!(
                    "interaction {row} references user {} / item {} outside {n_users} x {n_items}",
                    it.user, it.item
                )));
            }
        }
        Ok(Self {
            interactions,
            n_users,
            n_items,
            user_features: FeatureTable::empty(),
            item_features: FeatureTable::empty(),
            user_ids: IdMap::sequential(n_users),
            item_ids: IdMap::sequential(n_items),
        })
    }

    pub(crate) fn from_parts(interactions: Vec<Interaction>, user_ids: IdMap, item_ids: IdMap) -> Self {
        let n_users = user_ids.len();
        let n_items = item_ids.len();
        Self {
            interactions,
            n_users,
            n_items,
            user_features: FeatureTable::empty(),
            item_features: FeatureTable::empty(),
            user_ids,
            item_ids,
        }
    }

    /// Replaces both feature tables. Row counts must match the id spaces.
    pub fn with_features(mut self, users: FeatureTable, items: FeatureTable) -> Result<Self> {
        let rows = |t: &FeatureTable| t.data.len().checked_div(t.dim);
        if rows(&users).is_some_and(|n| n != self.n_users) || rows(&items).is_some_and(|n| n != self.n_items) {
            return Err(DatasetError::Invalid("feature table row count mismatch".into()));
        }
        self.user_features = users;
        self.item_features = items;
        Ok(self)
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn user_features(&self) -> &FeatureTable {
        &self.user_features
    }

    pub fn item_features(&self) -> &FeatureTable {
        &self.item_features
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }

    /// Sorted, deduplicated item ids each user interacted with.
    pub fn items_by_user(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_users];
        for it in &self.interactions {
            out[it.user as usize].push(it.item);
        }
        for items in &mut out {
            items.sort_unstable();
            items.dedup();
        }
        out
    }
}
