use super::{DataError, RawInteraction, Result};
use std::collections::HashMap;

/// Iteratively drops items, then users, with fewer than `k` interactions
/// until every survivor has at least `k`. Input order is preserved.
pub fn k_core_filter(interactions: &[RawInteraction], k: usize) -> Result<Vec<RawInteraction>> {
    if k == 0 {
        return Err(DataError::InvalidArgument("k-core requires k >= 1".into()));
    }
    let mut alive = vec![true; interactions.len()];
    loop {
        let mut changed = false;
        for by_item in [true, false] {
            let key = |r: &RawInteraction| if by_item { r.item.clone() } else { r.user.clone() };
            let mut degree: HashMap<String, usize> = HashMap::new();
            for (r, _) in interactions.iter().zip(&alive).filter(|(_, &a)| a) {
                *degree.entry(key(r)).or_default() += 1;
            }
            for (r, a) in interactions.iter().zip(alive.iter_mut()) {
                if *a && degree[&key(r)] < k {
                    *a = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(interactions
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(r, _)| r.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn row(u: &str, i: &str) -> RawInteraction {
        RawInteraction {
            user: u.into(),
            item: i.into(),
            timestamp: 0,
            domain: None,
        }
    }

    /// Deletes one under-degree entity at a time, in random order.
    pub(crate) fn brute_force(rows: &[RawInteraction], k: usize, seed: u64) -> Vec<RawInteraction> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = rows.to_vec();
        loop {
            let mut deg: HashMap<(bool, String), usize> = HashMap::new();
            for r in &rows {
                *deg.entry((true, r.item.clone())).or_default() += 1;
                *deg.entry((false, r.user.clone())).or_default() += 1;
            }
            let mut weak: Vec<_> = deg.into_iter().filter(|(_, d)| *d < k).map(|(e, _)| e).collect();
            if weak.is_empty() {
                return rows;
            }
            weak.sort();
            let (is_item, name) = weak.choose(&mut rng).unwrap().clone();
            rows.retain(|r| if is_item { r.item != name } else { r.user != name });
        }
    }

    #[test]
    fn k_one_is_identity() {
        let rows = vec![row("u1", "a"), row("u2", "b"), row("u1", "b")];
        assert_eq!(k_core_filter(&rows, 1).unwrap(), rows);
    }

    #[test]
    fn cascade_empties_small_graph() {
        let rows = vec![row("u1", "i1"), row("u1", "i2"), row("u2", "i1")];
        assert!(k_core_filter(&rows, 2).unwrap().is_empty());
    }

    #[test]
    fn clique_is_kept() {
        let rows: Vec<_> = ["u1", "u2", "u3"]
            .iter()
            .flat_map(|u| ["a", "b", "c"].iter().map(move |i| row(u, i)))
            .collect();
        assert_eq!(k_core_filter(&rows, 3).unwrap(), rows);
    }

    #[test]
    fn zero_k_rejected() {
        assert!(k_core_filter(&[], 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn matches_brute_force_and_is_a_fixpoint(
            edges in proptest::collection::vec((0u8..12, 0u8..12), 0..60),
            k in 1usize..4,
            seed in any::<u64>(),
        ) {
            let rows: Vec<_> = edges.iter().map(|(u, i)| row(&format!("u{u}"), &format!("i{i}"))).collect();
            let fast = k_core_filter(&rows, k).unwrap();
            let mut a = fast.clone();
            let mut b = brute_force(&rows, k, seed);
            let key = |r: &RawInteraction| (r.user.clone(), r.item.clone());
            a.sort_by_key(key);
            b.sort_by_key(key);
            prop_assert_eq!(a, b);
            prop_assert_eq!(k_core_filter(&fast, k).unwrap(), fast);
        }
    }
}
