use crate::error::Result;

use super::loss::cross_entropy;
use super::network::{Mode, Network};
use super::tensor::Tensor;

/// Gradient magnitudes below this are compared in absolute terms. A central
/// difference at h = 1e-6 carries about `eps * |loss| / h ~ 2e-10` of rounding
/// noise, so smaller gradients (such as the exactly-zero gradient of a bias
/// feeding batch norm) cannot be resolved to 1e-4 relative accuracy.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Train-mode cross-entropy loss and its parameter gradient.
pub fn loss_and_gradient(
    net: &Network,
    params: &[f64],
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let (logits, cache) = net.forward(params, batch, Mode::Train)?;
    let (loss, dlogits) = cross_entropy(&logits, labels)?;
    Ok((loss, cache.backward(&dlogits)?))
}

/// Largest relative error between `grad` and central differences of `f` on `coords`.
pub fn central_difference_error<F>(f: F, x: &[f64], grad: &[f64], coords: &[usize], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for &k in coords {
        probe[k] = x[k] + h;
        let plus = f(&probe)?;
        probe[k] = x[k] - h;
        let minus = f(&probe)?;
        probe[k] = x[k];
        worst = worst.max(relative_error(grad[k], (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}

/// Central-difference check of the backward pass on the selected coordinates.
/// Returns the largest relative error.
pub fn finite_diff_check(
    net: &Network,
    params: &[f64],
    batch: &Tensor,
    labels: &[usize],
    coords: &[usize],
    h: f64,
) -> Result<f64> {
    let (_, grad) = loss_and_gradient(net, params, batch, labels)?;
    let loss_at = |p: &[f64]| -> Result<f64> {
        let (logits, _) = net.forward(p, batch, Mode::Train)?;
        Ok(cross_entropy(&logits, labels)?.0)
    };
    central_difference_error(loss_at, params, &grad, coords, h)
}
