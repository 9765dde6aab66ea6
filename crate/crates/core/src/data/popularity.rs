use super::{DataError, ItemIdx, Result, SplitDataset};
use serde::{Deserialize, Serialize};

/// Training-interaction counts and equal-size popularity groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityIndex {
    /// `counts[i]` for item index `i`; slot 0 (padding) is always 0.
    pub counts: Vec<u64>,
    /// `group[i]` in `1..=groups`; slot 0 is unused (0).
    pub group: Vec<usize>,
    pub groups: usize,
}

impl PopularityIndex {
    pub fn group_of(&self, item: ItemIdx) -> usize {
        self.group[item as usize]
    }

    /// Items of group `g`, most popular first.
    pub fn members(&self, g: usize) -> Vec<ItemIdx> {
        let mut m: Vec<ItemIdx> = (1..self.group.len() as ItemIdx)
            .filter(|&i| self.group[i as usize] == g)
            .collect();
        m.sort_by(|&a, &b| self.counts[b as usize].cmp(&self.counts[a as usize]).then(a.cmp(&b)));
        m
    }
}

/// Sorts items by descending training count (ties by index) and cuts the
/// order into `groups` contiguous parts. When sizes cannot be equal the
/// most popular groups take one extra item.
pub fn popularity_groups(split: &SplitDataset, groups: usize) -> Result<PopularityIndex> {
    if groups == 0 {
        return Err(DataError::InvalidArgument("need at least one group".into()));
    }
    let n = split.catalog.len();
    let mut counts = vec![0u64; n + 1];
    for u in &split.users {
        for &i in &u.train {
            counts[i as usize] += 1;
        }
    }
    let mut order: Vec<ItemIdx> = (1..=n as ItemIdx).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    let mut group = vec![0usize; n + 1];
    let (base, extra) = (n / groups, n % groups);
    let mut pos = 0;
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        for &item in &order[pos..pos + size] {
            group[item as usize] = g + 1;
        }
        pos += size;
    }
    Ok(PopularityIndex {
        counts,
        group,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Catalog, UserSplit};
    use proptest::prelude::*;

    fn split_with_counts(counts: &[usize]) -> SplitDataset {
        let mut catalog = Catalog::new();
        for i in 0..counts.len() {
            catalog.intern(&format!("i{i}"), None);
        }
        let train = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i as ItemIdx + 1, c))
            .collect();
        SplitDataset {
            catalog,
            users: vec![UserSplit {
                user: 0,
                user_id: "u".into(),
                train,
                valid: 1,
                test: Some(1),
            }],
            excluded_short: 0,
            dropped_test: 0,
        }
    }

    #[test]
    fn equal_groups_and_tie_rule() {
        let p = popularity_groups(&split_with_counts(&[1, 2, 3, 4, 5, 6, 7, 8]), 4).unwrap();
        for g in 1..=4 {
            assert_eq!(p.members(g).len(), 2);
        }
        let p = popularity_groups(&split_with_counts(&[9, 7, 7, 1]), 2).unwrap();
        assert_eq!(p.members(1), [1, 2]);
        assert_eq!(p.members(2), [3, 4]);
        let p = popularity_groups(&split_with_counts(&[3, 1, 2]), 1).unwrap();
        assert_eq!(p.members(1).len(), 3);
    }

    proptest! {
        #[test]
        fn groups_are_ordered_and_balanced(counts in proptest::collection::vec(0usize..20, 1..40), g in 1usize..6) {
            let p = popularity_groups(&split_with_counts(&counts), g).unwrap();
            let sizes: Vec<usize> = (1..=g).map(|k| p.members(k).len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for k in 1..g {
                let lo = p.members(k).iter().map(|&i| p.counts[i as usize]).min();
                let hi = p.members(k + 1).iter().map(|&i| p.counts[i as usize]).max();
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    prop_assert!(lo >= hi);
                }
            }
        }
    }
}
