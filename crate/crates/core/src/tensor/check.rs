//! Numerical gradient checking against central differences.

use super::Tensor;
use crate::error::{Error, Result};

/// Compare the analytic gradient of `f` with respect to `x` against central
/// differences with step `h`, returning the worst relative error
/// `|analytic - numeric| / max(1, |numeric|)` over all coordinates.
///
/// `f` must rebuild its graph from `x` on every call; the closure is invoked
/// once for the analytic pass and twice per coordinate for the numeric one,
/// so keep the probe tensors small. `x`'s data is restored before returning.
pub fn grad_check(f: &dyn Fn() -> Tensor<f64>, x: &Tensor<f64>, h: f64) -> Result<f64> {
    x.zero_grad();
    f().backward()?;
    let analytic = x.grad().ok_or(Error::NoGrad("grad_check probe"))?;

    let base = x.value();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut bumped = base.clone();
        bumped[i] = base[i] + h;
        x.set_data(&bumped)?;
        let up = f().item();
        bumped[i] = base[i] - h;
        x.set_data(&bumped)?;
        let down = f().item();
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    x.set_data(&base)?;
    Ok(worst)
}
