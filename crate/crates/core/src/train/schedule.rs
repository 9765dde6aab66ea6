use super::{Result, TrainError};

/// Per-layer dropout rates interpolated linearly from `d_bottom` (first
/// layer) to `d_top` (last layer).
pub fn layerwise_dropout_rates(n_layer: usize, d_bottom: f64, d_top: f64) -> Result<Vec<f64>> {
    if !(0.0 <= d_top && d_top <= d_bottom && d_bottom < 1.0) {
        return Err(TrainError::InvalidPlan(format!(
            "dropout endpoints must satisfy 0 <= top <= bottom < 1, got bottom {d_bottom}, top {d_top}"
        )));
    }
    if n_layer == 0 {
        return Err(TrainError::InvalidPlan("n_layer must be positive".into()));
    }
    if n_layer == 1 {
        return Ok(vec![d_bottom]);
    }
    let span = (n_layer - 1) as f64;
    Ok((0..n_layer)
        .map(|l| d_bottom + (d_top - d_bottom) * l as f64 / span)
        .collect())
}

/// Linear warmup to `lr_peak`, then cosine decay to `lr_floor` at
/// `total_steps`. Steps past the end stay at the floor.
pub fn cosine_lr(step: u64, total_steps: u64, lr_peak: f64, lr_floor: f64, warmup_steps: u64) -> f64 {
    if step < warmup_steps {
        return lr_peak * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return lr_peak;
    }
    let progress = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0);
    lr_floor + 0.5 * (lr_peak - lr_floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Epochs since the last improvement of more than `tolerance` over the best
/// loss seen before it.
pub fn epochs_without_improvement(losses: &[f64], tolerance: f64) -> usize {
    let Some((&first, rest)) = losses.split_first() else {
        return 0;
    };
    let mut best = first;
    let mut stale = 0;
    for &l in rest {
        if l < best - tolerance {
            best = l;
            stale = 0;
        } else {
            best = best.min(l);
            stale += 1;
        }
    }
    stale
}

/// True once the best loss has not improved by more than `tolerance` for
/// `patience` consecutive epochs.
pub fn detect_switchover(losses: &[f64], patience: usize, tolerance: f64) -> bool {
    !losses.is_empty() && epochs_without_improvement(losses, tolerance) >= patience
}
