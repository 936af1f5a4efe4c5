//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `eval(point, want_grad)` must return the scalar loss at `point` and, when
/// `want_grad` is set, the analytic gradient with respect to every entry of
/// `point`. Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_diff_check<F>(point: &[f64], eps: f64, mut eval: F) -> Result<f64>
where
    F: FnMut(&[f64], bool) -> (f64, Option<Vec<f64>>),
{
    let (loss, grad) = eval(point, true);
    let analytic = grad.ok_or_else(|| Error::CheckFailed("no analytic gradient returned".into()))?;
    if analytic.len() != point.len() {
        return Err(Error::CheckFailed(format!(
            "gradient has {} entries for {} inputs",
            analytic.len(),
            point.len()
        )));
    }
    if !loss.is_finite() {
        return Err(Error::CheckFailed("non-finite loss at base point".into()));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (plus, _) = eval(&x, false);
        x[i] = orig - eps;
        let (minus, _) = eval(&x, false);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::CheckFailed(format!("non-finite gradient at input {}", i)));
        }
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let err = finite_diff_check(&[0.3, -1.2, 5.0], 1e-5, |x, _| {
            (x.iter().map(|v| 3.0 * v).sum(), Some(vec![3.0; x.len()]))
        })
        .unwrap();
        assert!(err < 1e-9, "{}", err);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = finite_diff_check(&[1.0, 2.0], 1e-5, |x, _| {
            (x.iter().map(|v| v * v).sum(), Some(x.to_vec()))
        })
        .unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = finite_diff_check(&[0.0], 1e-5, |x, _| (1.0 / x[0], Some(vec![0.0])));
        assert!(matches!(r, Err(Error::CheckFailed(_))));
    }
}
