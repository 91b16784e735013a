use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Central-difference gradient of a scalar function of a matrix:
/// `(f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)` for every coordinate.
pub fn numeric_gradient<F>(mut f: F, x: &Matrix<f64>, eps: f64) -> Result<Matrix<f64>>
where
    F: FnMut(&Matrix<f64>) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.as_slice()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at coordinate {i}: {plus} / {minus}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// `max |a - b| / max(max |b|, floor)`: relative error against a reference.
pub fn relative_error(actual: &Matrix<f64>, reference: &Matrix<f64>, floor: f64) -> f64 {
    actual.max_abs_diff(reference) / reference.max_abs().max(floor)
}
