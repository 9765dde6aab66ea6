//! Finite-difference gradient oracle.
//!
//! Uses only forward evaluations, so it is independent of the tape's
//! backward rules. Perturbation is `h = step · max(1, |w|)`.

use crate::tensor::{Gradients, ParamStore};

/// Central-difference stencils.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(w+h) − f(w−h)) / 2h`
    ThreePoint,
    /// `(−f(w+2h) + 8f(w+h) − 8f(w−h) + f(w−2h)) / 12h`
    FivePoint,
}

/// Largest elementwise discrepancy found by [`check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against finite differences of `loss` for every scalar
/// of every parameter in `store`.
pub fn check(
    store: &mut ParamStore,
    analytic: &Gradients,
    step: f64,
    stencil: Stencil,
    floor: f64,
    loss: impl Fn(&ParamStore) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = (0..store.len()).map(crate::tensor::ParamId).collect();
    for id in ids {
        for j in 0..store.get(id).value.numel() {
            let w = store.get(id).value.data()[j];
            let h = step * w.abs().max(1.0);
            let mut at = |delta: f64| {
                store.get_mut(id).value.data_mut()[j] = w + delta;
                let v = loss(store);
                store.get_mut(id).value.data_mut()[j] = w;
                v
            };
            let numeric = match stencil {
                Stencil::ThreePoint => (at(h) - at(-h)) / (2.0 * h),
                Stencil::FivePoint => {
                    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
                }
            };
            let a = analytic.get(id).data()[j];
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}
