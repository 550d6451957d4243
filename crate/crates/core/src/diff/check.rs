//! Central finite-difference verification of analytic gradients.

use super::params::ParamSet;
use super::tensor::Tensor;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`.
pub fn finite_diff_check_vec(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * step)));
    }
    worst
}

/// [`finite_diff_check_vec`] over every value of a parameter set.
pub fn finite_diff_check(mut loss: impl FnMut(&ParamSet) -> f64, params: &ParamSet, analytic: &[Tensor], step: f64) -> f64 {
    let flat = params.flatten();
    let grad: Vec<f64> = analytic.iter().flat_map(|t| t.data.iter().copied()).collect();
    let mut scratch = params.clone();
    finite_diff_check_vec(
        |x| {
            scratch.assign_flat(x);
            loss(&scratch)
        },
        &flat,
        &grad,
        step,
    )
}
