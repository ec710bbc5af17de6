use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Largest relative error between `analytic` and central differences of
/// `loss` around `params`.
///
/// Per coordinate `i`: `n = (f(θ + h e_i) - f(θ - h e_i)) / 2h` and
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(mut loss: impl FnMut(&[f64]) -> f64, analytic: &[f64], params: &[f64], h: f64) -> Result<f64> {
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    if !loss(params).is_finite() {
        return Err(Error::Numerical("loss is not finite at the probe point".into()));
    }
    let mut probe: Vec<f64> = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = loss(&probe);
        probe[i] = params[i] - h;
        let down = loss(&probe);
        probe[i] = params[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numerical(format!("non-finite loss while probing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
