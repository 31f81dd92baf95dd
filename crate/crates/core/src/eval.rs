//! Full-catalog ranking evaluation: HR@k and NDCG@k over the test split.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::SplitDataset;
use crate::mf::MfModel;
use crate::nn::Scalar;
use crate::ttnn::TowerScorer;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ranks to aggregate")]
    EmptyRanks,
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("target item {item} is excluded for user {user}")]
    TargetExcluded { user: u32, item: u32 },
    #[error("item {item} out of range for {n_items} items")]
    ItemOutOfRange { item: u32, n_items: usize },
    #[error("test split is empty")]
    EmptyTest,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Anything that assigns a relevance score to a user-item pair. Only the
/// order of scores for a fixed user matters.
pub trait Scorer {
    fn score(&self, user: u32, item: u32) -> f64;
}

impl<F: Fn(u32, u32) -> f64> Scorer for F {
    fn score(&self, user: u32, item: u32) -> f64 {
        self(user, item)
    }
}

impl<T: Scalar> Scorer for TowerScorer<T> {
    fn score(&self, user: u32, item: u32) -> f64 {
        self.logit(user, item)
    }
}

impl<T: Scalar> Scorer for MfModel<T> {
    fn score(&self, user: u32, item: u32) -> f64 {
        self.logit(user, item)
    }
}

/// 1-based rank of `target` among every item in `0..n_items` not in
/// `exclusions`. Ties go to the lower item index.
pub fn rank_of_target<S: Scorer + ?Sized>(
    scorer: &S,
    user: u32,
    target: u32,
    n_items: usize,
    exclusions: &HashSet<u32>,
) -> Result<usize> {
    if target as usize >= n_items {
        return Err(EvalError::ItemOutOfRange { item: target, n_items });
    }
    if exclusions.contains(&target) {
        return Err(EvalError::TargetExcluded { user, item: target });
    }
    let t = scorer.score(user, target);
    let mut rank = 1;
    for item in 0..n_items as u32 {
        if item == target || exclusions.contains(&item) {
            continue;
        }
        let s = scorer.score(user, item);
        if s > t || (s == t && item < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRanks);
    }
    if ranks.contains(&0) {
        return Err(EvalError::ZeroRank);
    }
    Ok(())
}

/// Percentage of ranks within the top `k`.
pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks)?;
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(100.0 * hits as f64 / ranks.len() as f64)
}

/// Gain of a single relevant item at `rank`, zero beyond `k`.
pub fn ndcg_gain(rank: usize, k: usize) -> f64 {
    if rank == 0 || rank > k {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

/// Mean single-target NDCG@k as a percentage.
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks)?;
    let total: f64 = ranks.iter().map(|&r| ndcg_gain(r, k)).sum();
    Ok(100.0 * total / ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub hr: f64,
    pub ndcg: f64,
    /// Test rows ranked, in test-split order.
    pub ranks: Vec<usize>,
}

/// Ranks each test row against the full catalog minus the user's train and
/// validation items. A test item the user also consumed earlier stays a
/// candidate so it can be ranked at all.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, split: &SplitDataset, k: usize) -> Result<RankingMetrics> {
    if split.test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let mut seen = split.seen_items();
    let n_items = split.parent.n_items();
    let mut ranks = Vec::with_capacity(split.test.len());
    for it in &split.test {
        let excl = &mut seen[it.user as usize];
        let readd = excl.remove(&it.item);
        ranks.push(rank_of_target(scorer, it.user, it.item, n_items, excl)?);
        if readd {
            excl.insert(it.item);
        }
    }
    Ok(RankingMetrics {
        hr: hr_at_k(&ranks, k)?,
        ndcg: ndcg_at_k(&ranks, k)?,
        ranks,
    })
}

pub const METRICS_CSV_HEADER: &str = "method,dataset,ratio,seed,hr10,ndcg10,pretrain_s,train_s";

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub dataset: String,
    /// Fraction of the train split used for training, in (0, 1].
    pub ratio: f64,
    pub seed: u64,
    pub hr_at_10: f64,
    pub ndcg_at_10: f64,
    pub pretrain_seconds: f64,
    pub train_seconds: f64,
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{:.4},{:.3},{:.3}",
            self.method,
            self.dataset,
            self.ratio,
            self.seed,
            self.hr_at_10,
            self.ndcg_at_10,
            self.pretrain_seconds,
            self.train_seconds
        )
    }

    /// The row without the two timing columns.
    pub fn csv_row_untimed(&self) -> String {
        let row = self.csv_row();
        let cut = row.rmatch_indices(',').nth(1).map_or(row.len(), |(i, _)| i);
        row[..cut].to_string()
    }

    /// `100·(gs − hr)/gs`, the relative HR@10 loss against a reference.
    pub fn degradation_vs(&self, gold: &MetricsReport) -> f64 {
        degradation(gold.hr_at_10, self.hr_at_10)
    }
}

pub fn degradation(reference: f64, value: f64) -> f64 {
    if reference == 0.0 {
        0.0
    } else {
        100.0 * (reference - value) / reference
    }
}

/// `x.xx (y.y%)`.
pub fn format_with_degradation(value: f64, reference: f64) -> String {
    format!("{value:.2} ({:.1}%)", degradation(reference, value))
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}
