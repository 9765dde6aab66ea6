use super::{Catalog, ItemIdx, UserSequence};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// One user's leave-one-out partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: u32,
    pub user_id: String,
    pub train: Vec<ItemIdx>,
    pub valid: ItemIdx,
    /// `None` when the test item never occurs in any train or validation
    /// portion of the corpus.
    pub test: Option<ItemIdx>,
}

impl UserSplit {
    /// History used to predict the test item: train prefix plus validation.
    pub fn test_history(&self) -> Vec<ItemIdx> {
        let mut h = self.train.clone();
        h.push(self.valid);
        h
    }

    /// The full original sequence, when the test item was retained.
    pub fn full_sequence(&self) -> Option<Vec<ItemIdx>> {
        self.test.map(|t| {
            let mut h = self.test_history();
            h.push(t);
            h
        })
    }
}

/// Leave-one-out dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub catalog: Catalog,
    pub users: Vec<UserSplit>,
    /// Sequences with fewer than three items.
    pub excluded_short: usize,
    /// Test entries dropped because their item is unseen in train ∪ valid.
    pub dropped_test: usize,
}

impl SplitDataset {
    /// Users whose test item was retained.
    pub fn test_users(&self) -> impl Iterator<Item = &UserSplit> {
        self.users.iter().filter(|u| u.test.is_some())
    }

    /// Number of training interactions (train prefixes only).
    pub fn train_interactions(&self) -> usize {
        self.users.iter().map(|u| u.train.len()).sum()
    }

    /// Keeps only the users at `indices` (ascending), sharing the catalog.
    pub fn select_users(&self, indices: &[usize]) -> SplitDataset {
        SplitDataset {
            catalog: self.catalog.clone(),
            users: indices.iter().map(|&i| self.users[i].clone()).collect(),
            excluded_short: self.excluded_short,
            dropped_test: self.dropped_test,
        }
    }
}

/// Last item → test, second-to-last → validation, the rest → train.
pub fn leave_one_out_split(sequences: &[UserSequence], catalog: &Catalog) -> SplitDataset {
    let mut excluded_short = 0;
    let mut users = Vec::new();
    for s in sequences {
        if s.items.len() < 3 {
            excluded_short += 1;
            continue;
        }
        let n = s.items.len();
        users.push(UserSplit {
            user: s.user,
            user_id: s.user_id.clone(),
            train: s.items[..n - 2].to_vec(),
            valid: s.items[n - 2],
            test: Some(s.items[n - 1]),
        });
    }
    let seen: HashSet<ItemIdx> = users
        .iter()
        .flat_map(|u| u.train.iter().copied().chain([u.valid]))
        .collect();
    let mut dropped_test = 0;
    for u in &mut users {
        if let Some(t) = u.test {
            if !seen.contains(&t) {
                u.test = None;
                dropped_test += 1;
            }
        }
    }
    SplitDataset {
        catalog: catalog.clone(),
        users,
        excluded_short,
        dropped_test,
    }
}
