use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `params`.
pub fn finite_difference_grad<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Below this magnitude gradients are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Largest `|a - n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_difference_grad(|x| x[0] * x[0], &[3.0], 1e-6).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_difference_grad(|_| 4.2, &[1.0, -2.0, 3.0], 1e-6).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(finite_difference_grad(|x| 1.0 / (x[0] - 1e-7), &[0.0], 1e-7).is_err());
        assert!(finite_difference_grad(|x| x[0].ln(), &[0.0], 1e-6).is_err());
        assert!(finite_difference_grad(|x| x[0], &[0.0], 0.0).is_err());
    }
}
