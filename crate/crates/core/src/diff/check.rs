//! Finite-difference gradient checking.

use super::tensor::Tensor;
use crate::error::Result;

/// Compare the analytic gradient of a scalar function against central
/// differences with step `h`, returning the maximum relative error
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)` over all
/// coordinates of `x`.
///
/// `f(x, want_grad)` evaluates the function; when `want_grad` it must also
/// return the full gradient w.r.t. `x`.
#[allow(clippy::needless_range_loop)]
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor, bool) -> Result<(f64, Option<Vec<f64>>)>,
{
    let (_, grad) = f(x, true)?;
    let grad = grad.expect("gradient requested");
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let (fp, _) = f(&probe, false)?;
        probe.data_mut()[i] = orig - h;
        let (fm, _) = f(&probe, false)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grad[i];
        let denom = (analytic.abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}
