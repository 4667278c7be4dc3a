//! Central finite differences, the reference against which reverse-mode
//! gradients are checked.

use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor used by [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_grad<F>(mut f: F, point: &Tensor<f64>, step: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = point.clone();
    let mut out = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("function value at coordinate {i}")));
        }
        out.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(out)
}

/// Central difference along a single coordinate.
pub fn finite_difference_at<F>(mut f: F, point: &Tensor<f64>, index: usize, step: f64) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = point.clone();
    probe.data_mut()[index] += step;
    let plus = f(&probe)?;
    probe.data_mut()[index] = point.data()[index] - step;
    let minus = f(&probe)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(format!("function value at coordinate {index}")));
    }
    Ok((plus - minus) / (2.0 * step))
}

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}
