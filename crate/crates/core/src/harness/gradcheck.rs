//! Central-finite-difference gradient verification.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Compares the analytic gradient of `loss_eval` at `point` against central
/// finite differences per coordinate and returns the worst error relative
/// to the gradient scale: `max_coords |numeric - analytic| / max(1e-12, G)`
/// with `G` the largest absolute analytic coordinate.
///
/// Normalizing by the gradient scale (not per coordinate) keeps the check
/// meaningful in double precision: the difference quotient carries rounding
/// noise of about `|f| eps / h`, which swamps any per-coordinate ratio on
/// coordinates that are orders of magnitude below the gradient norm.
///
/// `loss_eval` returns the loss value and its gradient at a point; `h` must
/// lie in `[1e-8, 1e-3]` and the point must be away from any non-smooth
/// boundary of the loss.
pub fn finite_diff_check<F>(loss_eval: F, point: &Array2<f64>, h: f64) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    if !(1e-8..=1e-3).contains(&h) {
        return Err(Error::BadParams(format!(
            "finite-difference step {h} outside [1e-8, 1e-3]"
        )));
    }
    let (value, analytic) = loss_eval(point)?;
    if !value.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss evaluation"));
    }
    if analytic.dim() != point.dim() {
        return Err(Error::ShapeMismatch {
            expected: point.dim(),
            got: analytic.dim(),
        });
    }

    let scale = analytic
        .iter()
        .map(|g| g.abs())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut max_rel = 0.0f64;
    let mut probe = point.clone();
    for idx in 0..point.len() {
        let (r, c) = (idx / point.ncols(), idx % point.ncols());
        let orig = probe[(r, c)];
        probe[(r, c)] = orig + h;
        let (plus, _) = loss_eval(&probe)?;
        probe[(r, c)] = orig - h;
        let (minus, _) = loss_eval(&probe)?;
        probe[(r, c)] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("perturbed loss evaluation"));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (numeric - analytic[(r, c)]).abs() / scale;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn quadratic(p: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        // f = sum(3 x^2 + 2 x), df/dx = 6 x + 2.
        let value = p.iter().map(|x| 3.0 * x * x + 2.0 * x).sum();
        let grad = p.map(|x| 6.0 * x + 2.0);
        Ok((value, grad))
    }

    #[test]
    fn quadratic_is_near_exact() {
        let point = arr2(&[[0.3, -1.2], [2.0, 0.7]]);
        let err = finite_diff_check(quadratic, &point, 1e-5).unwrap();
        assert!(err < 1e-9, "max rel error {err}");
    }

    #[test]
    fn out_of_range_step_rejected() {
        let point = arr2(&[[0.3, -1.2]]);
        assert!(matches!(
            finite_diff_check(quadratic, &point, 1.0).unwrap_err(),
            Error::BadParams(_)
        ));
        assert!(matches!(
            finite_diff_check(quadratic, &point, 1e-9).unwrap_err(),
            Error::BadParams(_)
        ));
    }

    #[test]
    fn sign_error_detected() {
        let broken = |p: &Array2<f64>| -> Result<(f64, Array2<f64>)> {
            let (v, g) = quadratic(p)?;
            Ok((v, g.map(|x| -x)))
        };
        let point = arr2(&[[0.5, 1.5]]);
        let err = finite_diff_check(broken, &point, 1e-5).unwrap();
        assert!(err > 1.0, "sabotaged gradient must fail loudly, got {err}");
    }
}
