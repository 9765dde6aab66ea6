//! Row-wise numeric kernels shared by the tape's forward and backward passes.

use super::{Result, TensorError};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GeLU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Softmax of one row in place. `allowed[j] == false` entries become exactly 0.
pub fn softmax_row(row: &mut [f64], allowed: Option<&[bool]>, row_index: usize) -> Result<()> {
    let ok = |j: usize| allowed.is_none_or(|a| a[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| ok(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(TensorError::FullyMaskedRow { row: row_index });
    }
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if ok(j) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = 0.0;
        }
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
    Ok(())
}

/// Given softmax output `y` and upstream `dy`, writes `dx` (accumulating).
pub fn softmax_row_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d += yi * (gi - dot);
    }
}

/// Normalises one row; writes `x̂` into `xhat` and returns `1/σ`.
pub fn layer_norm_row(x: &[f64], eps: f64, xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + eps).sqrt();
    for (h, v) in xhat.iter_mut().zip(x) {
        *h = (v - mean) * rstd;
    }
    rstd
}

/// Backward through normalisation: `dxhat` is the gradient w.r.t. `x̂`.
pub fn layer_norm_row_backward(xhat: &[f64], dxhat: &[f64], rstd: f64, dx: &mut [f64]) {
    let n = xhat.len() as f64;
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    for ((d, &g), &h) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *d += rstd * (g - mean_d - h * mean_dx);
    }
}

/// `log Σ exp(row[j])` over `j != skip`, plus the row max used.
pub fn log_sum_exp(row: &[f64], skip: Option<usize>) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != skip)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != skip)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    max + s.ln()
}
