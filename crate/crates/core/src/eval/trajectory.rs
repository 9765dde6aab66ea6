use super::{tr_at_k, EvalError, Result, Scorer};
use crate::data::ItemIdx;
use crate::exec::{map_ordered, Parallelism};
use serde::{Deserialize, Serialize};

/// Greedy autoregressive decoding of `k` items after `history`. Ties go
/// to the lower index. With `exclude_seen`, items already in the context
/// are skipped.
pub fn trajectory_rollout(scorer: &dyn Scorer, history: &[ItemIdx], k: usize, exclude_seen: bool) -> Result<Vec<ItemIdx>> {
    if history.is_empty() {
        return Err(EvalError::InvalidArgument("rollout needs a non-empty history".into()));
    }
    if k == 0 {
        return Err(EvalError::InvalidArgument("rollout length must be >= 1".into()));
    }
    let n = scorer.n_items();
    let mut ctx = history.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let s = scorer.score(&ctx)?;
        if s.len() != n + 1 {
            return Err(EvalError::ScoreLength { found: s.len(), expected: n + 1 });
        }
        let mut best: Option<usize> = None;
        for i in 1..=n {
            if exclude_seen && ctx.contains(&(i as ItemIdx)) {
                continue;
            }
            if s[i].is_nan() {
                continue;
            }
            if best.is_none_or(|b| s[i] > s[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else {
            return Err(EvalError::InvalidArgument("no candidate item left to decode".into()));
        };
        out.push(b as ItemIdx);
        ctx.push(b as ItemIdx);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRollout {
    pub user: usize,
    pub truth: Vec<ItemIdx>,
    pub predicted: Vec<ItemIdx>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub k_max: usize,
    pub users: usize,
    /// Sequences too short to provide a history and `k_max + 1` future items.
    pub excluded: usize,
    /// Mean TR@k for k = 1..=k_max.
    pub tr: Vec<f64>,
    /// `(TR@1 − TR@k)/TR@1`; all zero when TR@1 is zero.
    pub ratios: Vec<f64>,
    pub rollouts: Vec<TrajectoryRollout>,
}

impl TrajectoryReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("k\ttr\tdecrease_ratio\tusers\n");
        for (i, (t, r)) in self.tr.iter().zip(&self.ratios).enumerate() {
            out.push_str(&format!("{}\t{t}\t{r}\t{}\n", i + 1, self.users));
        }
        out
    }
}

/// For each sequence with at least `k_max + 2` items, the last item is
/// dropped, the `k_max` before it are the true future and the rest is the
/// history. Rolls out `k_max` items once per user and scores every prefix.
pub fn trajectory_eval(
    scorer: &dyn Scorer,
    sequences: &[Vec<ItemIdx>],
    k_max: usize,
    exclude_seen: bool,
    mode: Parallelism,
) -> Result<TrajectoryReport> {
    if k_max == 0 {
        return Err(EvalError::InvalidArgument("k_max must be >= 1".into()));
    }
    let eligible: Vec<usize> = (0..sequences.len()).filter(|&i| sequences[i].len() >= k_max + 2).collect();
    if eligible.is_empty() {
        return Err(EvalError::NoUsers(format!("no sequence has {} or more items", k_max + 2)));
    }
    let rollouts = map_ordered(&eligible, mode, |_, &u| -> Result<TrajectoryRollout> {
        let seq = &sequences[u];
        let cut = seq.len() - 1 - k_max;
        let truth = seq[cut..seq.len() - 1].to_vec();
        let predicted = trajectory_rollout(scorer, &seq[..cut], k_max, exclude_seen)?;
        Ok(TrajectoryRollout { user: u, truth, predicted })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut tr = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut sum = 0.0;
        for r in &rollouts {
            sum += tr_at_k(&r.truth, &r.predicted, k)?;
        }
        tr.push(sum / rollouts.len() as f64);
    }
    let ratios = tr
        .iter()
        .map(|&t| if tr[0] > 0.0 { (tr[0] - t) / tr[0] } else { 0.0 })
        .collect();
    Ok(TrajectoryReport {
        k_max,
        users: rollouts.len(),
        excluded: sequences.len() - rollouts.len(),
        tr,
        ratios,
        rollouts,
    })
}
