use std::collections::HashSet;
use std::sync::Arc;

use super::{DatasetError, Interaction, InteractionDataset, Result};

/// Train/validation/test partition of an [`InteractionDataset`].
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub parent: Arc<InteractionDataset>,
}

impl SplitDataset {
    /// Per-user items seen in train or validation, the evaluation exclusions.
    pub fn seen_items(&self) -> Vec<HashSet<u32>> {
        let mut seen = vec![HashSet::new(); self.parent.n_users()];
        for it in self.train.iter().chain(&self.validation) {
            seen[it.user as usize].insert(it.item);
        }
        seen
    }
}

/// Holds out each user's most recent interaction for test and the one
/// before it for validation. Users with fewer than three interactions are
/// dropped. Timestamp ties keep file order.
pub fn split_leave_last_two(dataset: Arc<InteractionDataset>) -> Result<SplitDataset> {
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_users()];
    for (idx, it) in dataset.interactions().iter().enumerate() {
        per_user[it.user as usize].push(idx);
    }
    let rows = dataset.interactions();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for mut history in per_user {
        if history.len() < 3 {
            continue;
        }
        // stable: equal timestamps stay in file order
        history.sort_by_key(|&i| rows[i].timestamp);
        let n = history.len();
        test.push(rows[history[n - 1]]);
        validation.push(rows[history[n - 2]]);
        train.extend(history[..n - 2].iter().map(|&i| rows[i]));
    }
    if test.is_empty() {
        return Err(DatasetError::EmptySplit);
    }
    Ok(SplitDataset {
        train,
        validation,
        test,
        parent: dataset,
    })
}
