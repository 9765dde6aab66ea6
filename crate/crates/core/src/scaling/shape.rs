use super::{Result, ScalingError};
use crate::model::{count_non_embedding_params, ModelShape};
use serde::{Deserialize, Serialize};

/// Relative tolerance on N for shape plans.
pub const SHAPE_TOLERANCE: f64 = 0.02;

/// `d_model / n_layer`.
pub fn aspect_ratio(shape: &ModelShape) -> f64 {
    shape.d_model as f64 / shape.n_layer as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapePlanEntry {
    pub shape: ModelShape,
    pub requested_ratio: f64,
    pub ratio: f64,
    pub n: u64,
    /// `(n − target) / target`.
    pub deviation: f64,
}

const MAX_LAYERS: usize = 256;
const MAX_WIDTH: usize = 8192;

fn n_for(l: usize, d: usize) -> u64 {
    12 * (l as u64) * (d as u64).pow(2)
}

/// Heads of 32 dimensions where possible, always dividing `d`.
pub fn default_heads(d: usize) -> usize {
    (1..=(d / 32).max(1)).rev().find(|h| d.is_multiple_of(*h)).unwrap_or(1)
}

/// Feasible `12·L·d²` values (d a multiple of 8) closest to `target`,
/// ascending.
pub fn feasible_sizes_near(target: u64, count: usize) -> Vec<u64> {
    let mut all: Vec<u64> = Vec::new();
    for l in 1..=MAX_LAYERS {
        for d in (8..=MAX_WIDTH).step_by(8) {
            all.push(n_for(l, d));
        }
    }
    all.sort_unstable();
    all.dedup();
    all.sort_by_key(|&n| (n.abs_diff(target), n));
    let mut near: Vec<u64> = all.into_iter().take(count).collect();
    near.sort_unstable();
    near
}

/// Equal-N shapes spanning `ratios`: for each ratio, the feasible
/// `(n_layer, d_model)` within 2% of `n_target` whose aspect ratio is
/// closest to it in log terms. Widths are multiples of 8 and
/// `d_ff = 4·d_model`.
pub fn shape_sweep_plan(n_target: u64, ratios: &[f64], s: usize, n_items: usize) -> Result<Vec<ShapePlanEntry>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(ScalingError::InvalidArgument("ratios must be positive and non-empty".into()));
    }
    let target = n_target as f64;
    let mut feasible = Vec::new();
    for l in 1..=MAX_LAYERS {
        let d_star = (target / (12.0 * l as f64)).sqrt();
        let lo = ((d_star / 8.0).floor() as usize * 8).max(8);
        for d in [lo, lo + 8] {
            let n = n_for(l, d);
            let dev = (n as f64 - target) / target;
            if dev.abs() <= SHAPE_TOLERANCE {
                feasible.push((l, d, n, dev));
            }
        }
    }
    if feasible.is_empty() {
        return Err(ScalingError::Infeasible {
            target: n_target,
            nearest: feasible_sizes_near(n_target, 3),
        });
    }
    let mut out: Vec<ShapePlanEntry> = Vec::new();
    for &r in ratios {
        let &(l, d, n, dev) = feasible
            .iter()
            .min_by(|a, b| {
                let ka = ((a.1 as f64 / a.0 as f64) / r).ln().abs();
                let kb = ((b.1 as f64 / b.0 as f64) / r).ln().abs();
                ka.total_cmp(&kb).then(a.3.abs().total_cmp(&b.3.abs()))
            })
            .expect("non-empty");
        let shape = ModelShape::standard(l, d, default_heads(d), s, n_items)?;
        debug_assert_eq!(count_non_embedding_params(&shape), n);
        if out.iter().any(|e| e.shape == shape) {
            continue;
        }
        out.push(ShapePlanEntry {
            shape,
            requested_ratio: r,
            ratio: aspect_ratio(&shape),
            n,
            deviation: dev,
        });
    }
    Ok(out)
}

/// `100·(variant − standard)/standard` for each variant loss.
pub fn loss_increase_vs_standard(variants: &[f64], standard: f64) -> Vec<f64> {
    variants.iter().map(|v| 100.0 * (v - standard) / standard).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_of_reference_shapes() {
        let r = |l, d| aspect_ratio(&ModelShape::standard(l, d, 1, 8, 10).unwrap());
        assert_eq!(r(8, 128), 16.0);
        assert_eq!(r(32, 64), 2.0);
        assert_eq!(r(2, 256), 128.0);
        let table = [(2, 64, 32.0), (4, 128, 32.0), (8, 128, 16.0), (12, 256, 256.0 / 12.0), (24, 512, 512.0 / 24.0), (48, 1200, 25.0)];
        for (l, d, want) in table {
            assert_eq!(r(l, d), want);
        }
    }

    #[test]
    fn plan_at_fixed_size() {
        let plan = shape_sweep_plan(1_572_864, &[2.0, 16.0, 128.0], 20, 100).unwrap();
        let dims: Vec<(usize, usize)> = plan.iter().map(|e| (e.shape.n_layer, e.shape.d_model)).collect();
        assert_eq!(dims, vec![(32, 64), (8, 128), (2, 256)]);
        assert!(plan.iter().all(|e| e.deviation == 0.0 && e.n == 1_572_864));
        let small = shape_sweep_plan(98_304, &[32.0], 20, 100).unwrap();
        assert_eq!((small[0].shape.n_layer, small[0].shape.d_model), (2, 64));
        for e in shape_sweep_plan(1_000_000, &[1.0, 4.0, 16.0, 64.0], 20, 100).unwrap() {
            assert!(e.deviation.abs() <= SHAPE_TOLERANCE);
            assert_eq!(e.shape.d_model % e.shape.n_head, 0);
        }
    }

    #[test]
    fn infeasible_size_suggests_neighbours() {
        match shape_sweep_plan(1000, &[8.0], 20, 100) {
            Err(ScalingError::Infeasible { target, nearest }) => {
                assert_eq!(target, 1000);
                assert_eq!(nearest, vec![768, 1536, 2304]);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn percentage_increase() {
        assert_eq!(loss_increase_vs_standard(&[5.0], 5.0), vec![0.0]);
        let p = loss_increase_vs_standard(&[5.25], 5.0);
        assert!((p[0] - 5.0).abs() < 1e-12);
    }
}
