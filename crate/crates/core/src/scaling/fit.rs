use super::{Result, ScalingError, ScalingPoint, LossKind};
use serde::{Deserialize, Serialize};

/// `L(N) = E + (N0/N)^alpha`, fitted in log-loss space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub e_n: f64,
    pub n0: f64,
    /// `ln n0`, kept separately because `n0` can underflow for flat data.
    pub ln_n0: f64,
    pub alpha: f64,
    /// Sum of squared log residuals.
    pub rss: f64,
    /// `ln L_pred − ln L` per input point, in input order.
    pub residuals: Vec<f64>,
    /// Set when all losses are equal and no exponent is identifiable.
    pub degenerate: bool,
    /// Largest `N` used in the fit.
    pub max_n: f64,
    pub iterations: usize,
}

impl PowerLawFit {
    /// The law's closed form with given constants.
    pub fn from_constants(e_n: f64, n0: f64, alpha: f64) -> Self {
        Self {
            e_n,
            n0,
            ln_n0: n0.ln(),
            alpha,
            rss: 0.0,
            residuals: Vec::new(),
            degenerate: false,
            max_n: 0.0,
            iterations: 0,
        }
    }
}

/// `E + (N0/N)^alpha`.
pub fn predict_loss(fit: &PowerLawFit, n: f64) -> f64 {
    fit.e_n + (fit.alpha * (fit.ln_n0 - n.ln())).exp()
}

const ALPHA_GRID: usize = 25;
const ALPHA_MIN: f64 = 0.01;
const ALPHA_MAX: f64 = 1.0;
const MAX_ITER: usize = 500;
const STEP_TOL: f64 = 1e-10;

/// Parameter vector `(E, ln N0, alpha)`.
type Theta = [f64; 3];

fn rss(theta: &Theta, ln_n: &[f64], ln_l: &[f64]) -> f64 {
    ln_n.iter()
        .zip(ln_l)
        .map(|(&x, &y)| {
            let p = theta[0] + (theta[2] * (theta[1] - x)).exp();
            let r = p.ln() - y;
            r * r
        })
        .sum()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        for r in 0..3 {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..4 {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Levenberg-Marquardt from `theta`, keeping `E ≥ 0` and `alpha > 0`.
fn refine(mut theta: Theta, ln_n: &[f64], ln_l: &[f64]) -> (Theta, f64, usize) {
    let mut cost = rss(&theta, ln_n, ln_l);
    let mut lambda = 1e-3;
    let mut iters = 0;
    while iters < MAX_ITER {
        iters += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&x, &y) in ln_n.iter().zip(ln_l) {
            let t = (theta[2] * (theta[1] - x)).exp();
            let p = theta[0] + t;
            let r = p.ln() - y;
            let j = [1.0 / p, theta[2] * t / p, t * (theta[1] - x) / p];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(delta) = solve3(a, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let mut next = [theta[0] + delta[0], theta[1] + delta[1], theta[2] + delta[2]];
            next[0] = next[0].max(0.0);
            next[2] = next[2].max(1e-12);
            let c = rss(&next, ln_n, ln_l);
            if c.is_finite() && c <= cost {
                let step = (0..3)
                    .map(|k| (next[k] - theta[k]).abs() / theta[k].abs().max(1e-12))
                    .fold(0.0, f64::max);
                theta = next;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if step < STEP_TOL {
                    return (theta, cost, iters);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    (theta, cost, iters)
}

/// Fits the law to `(N, loss)` pairs by multi-start least squares in log
/// space.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(ScalingError::TooFewPoints { found: distinct.len() });
    }
    if points.iter().any(|&(n, l)| !(n >= 1.0 && l > 0.0 && l.is_finite() && n.is_finite())) {
        return Err(ScalingError::InvalidArgument("points need N >= 1 and finite loss > 0".into()));
    }
    // Sorting makes the result independent of input order.
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let ln_n: Vec<f64> = sorted.iter().map(|p| p.0.ln()).collect();
    let ln_l: Vec<f64> = sorted.iter().map(|p| p.1.ln()).collect();
    let min_l = sorted.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_l = sorted.iter().map(|p| p.1).fold(0.0, f64::max);
    let max_n = distinct[distinct.len() - 1];

    let finish = |theta: Theta, cost: f64, iterations: usize, degenerate: bool| {
        let residuals = points
            .iter()
            .map(|&(n, l)| (theta[0] + (theta[2] * (theta[1] - n.ln())).exp()).ln() - l.ln())
            .collect();
        PowerLawFit {
            e_n: theta[0],
            n0: theta[1].exp(),
            ln_n0: theta[1],
            alpha: theta[2],
            rss: cost,
            residuals,
            degenerate,
            max_n,
            iterations,
        }
    };

    if max_l - min_l <= 1e-12 * max_l {
        // Flat curve: put the whole loss in E and make the power term vanish.
        let theta = [min_l, distinct[0].ln() - 40.0 / ALPHA_MIN, ALPHA_MIN];
        let cost = rss(&theta, &ln_n, &ln_l);
        return Ok(finish(theta, cost, 0, true));
    }

    let mut best: Option<(Theta, f64, usize)> = None;
    for i in 0..ALPHA_GRID {
        let alpha = ALPHA_MIN * (ALPHA_MAX / ALPHA_MIN).powf(i as f64 / (ALPHA_GRID - 1) as f64);
        for e_frac in [0.0, 0.5, 0.9, 0.99] {
            let e = e_frac * min_l;
            let u = sorted
                .iter()
                .map(|&(n, l)| (l - e).ln() / alpha + n.ln())
                .sum::<f64>()
                / sorted.len() as f64;
            let (theta, cost, iters) = refine([e, u, alpha], &ln_n, &ln_l);
            if cost.is_finite() && best.as_ref().is_none_or(|b| cost < b.1) {
                best = Some((theta, cost, iters));
            }
        }
    }
    let (theta, cost, iters) = best.ok_or_else(|| {
        ScalingError::NonConvergence(format!(
            "no start produced a finite fit; losses span {min_l}..{max_l}"
        ))
    })?;
    Ok(finish(theta, cost, iters, false))
}

/// Fits the selected loss of `points`.
pub fn fit_points(points: &[ScalingPoint], kind: LossKind) -> Result<PowerLawFit> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.loss_of(kind))).collect();
    fit_power_law(&pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationRow {
    pub n: f64,
    pub actual: f64,
    pub predicted: f64,
    /// `|predicted − actual| / actual`.
    pub rel_error: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub rows: Vec<ExtrapolationRow>,
    pub bound: f64,
    /// Every row is within the bound.
    pub predictable: bool,
}

/// Compares the fit's predictions with held-out larger models.
pub fn extrapolation_report(fit: &PowerLawFit, held_out: &[(f64, f64)], bound: f64) -> Result<ExtrapolationReport> {
    if let Some(&(n, _)) = held_out.iter().find(|p| p.0 <= fit.max_n) {
        return Err(ScalingError::Precondition(format!(
            "held-out N = {n} does not exceed the largest fitted N = {}",
            fit.max_n
        )));
    }
    let rows: Vec<ExtrapolationRow> = held_out
        .iter()
        .map(|&(n, actual)| {
            let predicted = predict_loss(fit, n);
            let rel_error = (predicted - actual).abs() / actual;
            ExtrapolationRow {
                n,
                actual,
                predicted,
                rel_error,
                within_bound: rel_error < bound,
            }
        })
        .collect();
    Ok(ExtrapolationReport {
        predictable: rows.iter().all(|r| r.within_bound),
        rows,
        bound,
    })
}
