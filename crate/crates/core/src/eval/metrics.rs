use super::{EvalError, Result};
use crate::data::ItemIdx;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Items in descending score order, truncated to `depth`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<ItemIdx>,
    pub depth: usize,
}

/// NaN sorts below everything.
fn key(s: f64) -> f64 {
    if s.is_nan() {
        f64::NEG_INFINITY
    } else {
        s
    }
}

/// Higher score first; equal scores by ascending index.
fn before(scores: &[f64], a: usize, b: usize) -> Ordering {
    key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b))
}

/// Top `depth` items of `scores` (slot 0 is padding and never ranked).
pub fn rank_items(user: usize, scores: &[f64], depth: usize) -> RankedList {
    let mut idx: Vec<usize> = (1..scores.len()).collect();
    let depth = depth.min(idx.len());
    if depth > 0 && depth < idx.len() {
        idx.select_nth_unstable_by(depth - 1, |&a, &b| before(scores, a, b));
        idx.truncate(depth);
    }
    idx.sort_by(|&a, &b| before(scores, a, b));
    idx.truncate(depth);
    RankedList {
        user,
        items: idx.into_iter().map(|i| i as ItemIdx).collect(),
        depth,
    }
}

/// 1-based rank of `target` among items `1..scores.len()` under the same
/// ordering as [`rank_items`].
pub fn rank_of(scores: &[f64], target: ItemIdx) -> usize {
    let t = target as usize;
    1 + (1..scores.len())
        .filter(|&i| i != t && before(scores, i, t) == Ordering::Less)
        .count()
}

fn position(ranked: &RankedList, target: ItemIdx) -> Option<usize> {
    ranked.items.iter().position(|&i| i == target).map(|p| p + 1)
}

/// 1 when `target` is among the first `n` items.
pub fn hr_at_n(ranked: &RankedList, target: ItemIdx, n: usize) -> f64 {
    match position(ranked, target) {
        Some(r) if r <= n => 1.0,
        _ => 0.0,
    }
}

/// `1/log2(rank + 1)` within the cutoff, 0 otherwise.
pub fn ndcg_at_n(ranked: &RankedList, target: ItemIdx, n: usize) -> f64 {
    match position(ranked, target) {
        Some(r) if r <= n => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Share of the `n_items` catalog appearing in any list's first `n` items.
pub fn coverage_at_n(lists: &[RankedList], n: usize, n_items: usize) -> f64 {
    let mut seen = vec![false; n_items + 1];
    for l in lists {
        for &i in l.items.iter().take(n) {
            seen[i as usize] = true;
        }
    }
    seen[1..].iter().filter(|&&s| s).count() as f64 / n_items as f64
}

/// Position-discounted overlap of a predicted trajectory with the true
/// one: `Σ_j (2^{I_j} − 1)/log2(j+1) / Σ_j 1/log2(j+1)` over `j = 1..=k`,
/// where `I_j` says whether `predicted[j]` occurs in `truth[..k]`.
pub fn tr_at_k(truth: &[ItemIdx], predicted: &[ItemIdx], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(EvalError::InvalidArgument("TR@k needs k >= 1".into()));
    }
    if truth.len() < k || predicted.len() < k {
        return Err(EvalError::InvalidArgument(format!(
            "TR@{k} needs trajectories of length >= {k}, got {} and {}",
            truth.len(),
            predicted.len()
        )));
    }
    let truth = &truth[..k];
    let (mut num, mut z) = (0.0, 0.0);
    for (j, p) in predicted[..k].iter().enumerate() {
        let w = 1.0 / ((j + 2) as f64).log2();
        z += w;
        if truth.contains(p) {
            num += w;
        }
    }
    Ok(num / z)
}
