use super::{DataError, Result, UserSequence};
use rand::seq::SliceRandom;

/// Samples whole units (users) uniformly without replacement until their
/// cumulative length first reaches `target`. Returns the chosen indices in
/// ascending order.
pub fn subsample_by_length(lengths: &[usize], target: i64, seed: u64) -> Result<Vec<usize>> {
    if target <= 0 {
        return Err(DataError::InvalidArgument(format!(
            "target interaction count must be positive, got {target}"
        )));
    }
    let total: usize = lengths.iter().sum();
    if target as u128 > total as u128 {
        return Err(DataError::InvalidArgument(format!(
            "target {target} exceeds the {total} available interactions"
        )));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, &[0x5AB5]));
    let mut acc = 0usize;
    let mut chosen = Vec::new();
    for i in order {
        if acc as i64 >= target {
            break;
        }
        acc += lengths[i];
        chosen.push(i);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// User-level subsample of `sequences` reaching at least `target` interactions.
pub fn subsample_interactions(
    sequences: &[UserSequence],
    target: i64,
    seed: u64,
) -> Result<Vec<UserSequence>> {
    let lengths: Vec<usize> = sequences.iter().map(UserSequence::len).collect();
    let chosen = subsample_by_length(&lengths, target, seed)?;
    Ok(chosen.into_iter().map(|i| sequences[i].clone()).collect())
}

/// Withholds `round(fraction · |users|)` users chosen uniformly at random.
/// Returns `(training users, held-out users)`, each in input order.
pub fn holdout_cold_start(
    sequences: &[UserSequence],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<UserSequence>, Vec<UserSequence>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "cold-start fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let k = (fraction * sequences.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, &[0xC01D]));
    let mut held = vec![false; sequences.len()];
    for &i in &order[..k] {
        held[i] = true;
    }
    let (out, train): (Vec<_>, Vec<_>) = sequences
        .iter()
        .cloned()
        .zip(held)
        .partition(|(_, h)| *h);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        out.into_iter().map(|(s, _)| s).collect(),
    ))
}
