use super::{Catalog, ItemIdx, RawInteraction, UserSequence, PAD};
use std::collections::HashMap;

/// Groups interactions by user and orders each history by timestamp.
///
/// Ties keep file order. Users and items are indexed in order of first
/// appearance. Domain lists are attached when every row carries a tag.
pub fn build_sequences(interactions: &[RawInteraction]) -> (Vec<UserSequence>, Catalog) {
    let mut catalog = Catalog::new();
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (i, r) in interactions.iter().enumerate() {
        let u = *user_index.entry(r.user.as_str()).or_insert_with(|| {
            rows.push(Vec::new());
            rows.len() - 1
        });
        rows[u].push(i);
        catalog.intern(&r.item, r.domain.as_deref());
    }
    let tagged = interactions.iter().all(|r| r.domain.is_some()) && !interactions.is_empty();
    let mut users: Vec<(&str, usize)> = user_index.into_iter().collect();
    users.sort_by_key(|&(_, u)| u);
    let sequences = users
        .into_iter()
        .map(|(id, u)| {
            let mut idx = rows[u].clone();
            idx.sort_by_key(|&i| interactions[i].timestamp);
            UserSequence {
                user: u as u32,
                user_id: id.to_string(),
                items: idx
                    .iter()
                    .map(|&i| catalog.index_of(&interactions[i].item).unwrap())
                    .collect(),
                domains: tagged.then(|| {
                    idx.iter()
                        .map(|&i| interactions[i].domain.clone().unwrap())
                        .collect()
                }),
            }
        })
        .collect();
    (sequences, catalog)
}

/// Keeps the most recent `s` items, left-padding with [`PAD`] to length `s`.
pub fn truncate_pad(items: &[ItemIdx], s: usize) -> Vec<ItemIdx> {
    assert!(s >= 1, "window length must be positive");
    if items.len() >= s {
        items[items.len() - s..].to_vec()
    } else {
        let mut out = vec![PAD; s - items.len()];
        out.extend_from_slice(items);
        out
    }
}

/// Keeps the `k` most recent pre-test interactions of `sequence` and its
/// final (test) element.
pub fn keep_last_k<T: Clone>(sequence: &[T], k: usize) -> Vec<T> {
    assert!(k >= 1, "k must be positive");
    let Some((test, history)) = sequence.split_last() else {
        return Vec::new();
    };
    let start = history.len().saturating_sub(k);
    let mut out = history[start..].to_vec();
    out.push(test.clone());
    out
}
