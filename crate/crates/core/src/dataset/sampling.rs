use std::collections::BTreeMap;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{DatasetError, Interaction, InteractionDataset, Result};
use crate::rng::{stream, streams};

/// Upper bound on how many times over-sampling may multiply an item's rows.
pub const OVERSAMPLE_CAP: usize = 10;

/// Uniformly samples `floor(ratio * |train|)` rows without replacement,
/// keeping their original relative order.
pub fn sample_uniform(train: &[Interaction], ratio: f64, seed: u64) -> Result<Vec<Interaction>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    if ratio == 1.0 {
        return Ok(train.to_vec());
    }
    // the epsilon absorbs representation error such as 0.29 * 100 = 28.999…
    let m = ((ratio * train.len() as f64) + 1e-9).floor() as usize;
    let m = m.min(train.len());
    let mut rng = stream(seed, streams::COMPRESS);
    let mut picked = index::sample(&mut rng, train.len(), m).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| train[i]).collect())
}

/// Sampled negative pairs, all with label 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    pub pairs: Vec<(u32, u32)>,
    pub seed: u64,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Draws negatives from the items a user never interacted with anywhere in
/// the full log. Built once per dataset and reused across epochs.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    seen: Vec<Vec<u32>>,
    n_items: usize,
}

impl NegativeSampler {
    pub fn new(dataset: &InteractionDataset) -> Self {
        Self {
            seen: dataset.items_by_user(),
            n_items: dataset.n_items(),
        }
    }

    pub fn is_positive(&self, user: u32, item: u32) -> bool {
        self.seen
            .get(user as usize)
            .is_some_and(|items| items.binary_search(&item).is_ok())
    }

    /// `k` negatives per positive, rejection-resampled on collision.
    /// Users who have interacted with every item get none.
    pub fn sample(&self, positives: &[Interaction], k: usize, seed: u64) -> Result<NegativeSet> {
        if k == 0 {
            return Err(DatasetError::InvalidNegativeCount);
        }
        let mut rng = stream(seed, streams::NEGATIVES);
        let mut pairs = Vec::with_capacity(positives.len() * k);
        let mut saturated = 0usize;
        for p in positives {
            let seen = &self.seen[p.user as usize];
            if seen.len() >= self.n_items {
                saturated += 1;
                continue;
            }
            for _ in 0..k {
                let item = loop {
                    let cand = rng.random_range(0..self.n_items as u32);
                    if seen.binary_search(&cand).is_err() {
                        break cand;
                    }
                };
                pairs.push((p.user, item));
            }
        }
        if saturated > 0 {
            warn!("skipped negatives for {saturated} positives whose users interacted with every item");
        }
        Ok(NegativeSet { pairs, seed })
    }
}

pub fn sample_negatives(
    positives: &[Interaction],
    dataset: &InteractionDataset,
    k: usize,
    seed: u64,
) -> Result<NegativeSet> {
    NegativeSampler::new(dataset).sample(positives, k, seed)
}

/// Row indices grouped by item, in ascending item order.
fn rows_by_item(train: &[Interaction]) -> BTreeMap<u32, Vec<usize>> {
    let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (idx, it) in train.iter().enumerate() {
        map.entry(it.item).or_default().push(idx);
    }
    map
}

/// Lower median of the per-item counts over items present in `train`.
fn median_frequency(groups: &BTreeMap<u32, Vec<usize>>) -> usize {
    let mut counts: Vec<usize> = groups.values().map(Vec::len).collect();
    counts.sort_unstable();
    counts[(counts.len() - 1) / 2]
}

/// Duplicates rows of items rarer than the median item frequency until
/// they reach the median, never beyond `OVERSAMPLE_CAP` times their
/// original count. The result is shuffled; if nothing was duplicated the
/// input is returned unchanged.
pub fn oversample_tail(train: &[Interaction], seed: u64) -> Result<Vec<Interaction>> {
    if train.is_empty() {
        return Err(DatasetError::Empty);
    }
    let groups = rows_by_item(train);
    let median = median_frequency(&groups);
    let mut rng = stream(seed, streams::TRANSFORM);
    let mut extra = Vec::new();
    for rows in groups.values() {
        let f = rows.len();
        if f >= median {
            continue;
        }
        let need = median.min(OVERSAMPLE_CAP * f) - f;
        for _ in 0..need / f {
            extra.extend(rows.iter().map(|&i| train[i]));
        }
        let rest = need % f;
        if rest > 0 {
            let mut pick = index::sample(&mut rng, f, rest).into_vec();
            pick.sort_unstable();
            extra.extend(pick.into_iter().map(|j| train[rows[j]]));
        }
    }
    if extra.is_empty() {
        return Ok(train.to_vec());
    }
    let mut out = train.to_vec();
    out.extend(extra);
    out.shuffle(&mut rng);
    Ok(out)
}

/// Uniformly subsamples items more frequent than the median item frequency
/// down to the median. Surviving rows keep their relative order.
pub fn undersample_head(train: &[Interaction], seed: u64) -> Result<Vec<Interaction>> {
    if train.is_empty() {
        return Err(DatasetError::Empty);
    }
    let groups = rows_by_item(train);
    let median = median_frequency(&groups);
    let mut rng = stream(seed, streams::TRANSFORM);
    let mut keep = vec![true; train.len()];
    for rows in groups.values() {
        if rows.len() <= median {
            continue;
        }
        rows.iter().for_each(|&i| keep[i] = false);
        for j in index::sample(&mut rng, rows.len(), median) {
            keep[rows[j]] = true;
        }
    }
    Ok(train
        .iter()
        .zip(keep)
        .filter_map(|(it, k)| k.then_some(*it))
        .collect())
}

/// Add-one-smoothed empirical item distribution: `(count + 1) / (|train| + n_items)`.
pub fn item_frequency(train: &[Interaction], n_items: usize) -> Vec<f64> {
    let mut counts = vec![1.0f64; n_items];
    for it in train {
        counts[it.item as usize] += 1.0;
    }
    let total = (train.len() + n_items) as f64;
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}
