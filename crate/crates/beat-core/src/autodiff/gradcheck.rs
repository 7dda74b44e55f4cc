//! Central-difference gradient verification.

use super::array::DenseArray;
use crate::error::{Error, Result};

/// Smallest accepted finite-difference step.
pub const MIN_STEP: f64 = 1e-7;
/// Largest accepted finite-difference step.
pub const MAX_STEP: f64 = 1e-3;

/// Compares an analytic gradient against central differences of a scalar
/// function at `point`, returning the worst relative error
/// `|analytic - numeric| / (|analytic| + 1e-12)` over all coordinates.
///
/// `value` evaluates the scalar function, `gradient` its analytic gradient
/// (same shape as `point`). Errors if `step` falls outside
/// `[MIN_STEP, MAX_STEP]` or if any evaluation produces a non-finite value.
pub fn grad_check<F, G>(mut value: F, mut gradient: G, point: &DenseArray, step: f64) -> Result<f64>
where
    F: FnMut(&DenseArray) -> Result<f64>,
    G: FnMut(&DenseArray) -> Result<DenseArray>,
{
    if !(MIN_STEP..=MAX_STEP).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {step} outside [{MIN_STEP}, {MAX_STEP}]"
        )));
    }
    let analytic = gradient(point)?;
    if analytic.shape() != point.shape() {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            details: format!("gradient {:?} vs point {:?}", analytic.shape(), point.shape()),
        });
    }
    if !analytic.all_finite() {
        return Err(Error::NonFinite("grad_check analytic gradient"));
    }

    let mut probe = point.clone();
    let mut worst = 0.0_f64;
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = value(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = value(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("grad_check function value"));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
