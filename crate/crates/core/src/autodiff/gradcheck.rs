//! Central-difference verification of backward rules.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Max relative error between `analytic` and central differences of `eval`
/// taken coordinate by coordinate around `point`.
pub fn compare_with_central_differences(
    point: &[f64],
    analytic: &[f64],
    step: f64,
    mut eval: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = eval(&x);
        x[i] = orig - step;
        let minus = eval(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Checks the gradient of a scalar tensor function at `point`.
///
/// `f` receives a fresh tape and the input variable and must return a
/// one-element output. Returns the max relative error over coordinates.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.variable(point.clone());
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x)?;

    let shape = point.shape().to_vec();
    let mut failure = None;
    let worst = compare_with_central_differences(point.data(), analytic.data(), step, |p| {
        let mut tape = Tape::new();
        let input = Tensor::new(shape.clone(), p.to_vec()).expect("shape preserved");
        let x = tape.constant(input);
        match f(&mut tape, x) {
            Ok(y) => tape.value(y).item(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None if worst.is_nan() => Err(Error::InvalidArgument("gradient check produced NaN".into())),
        None => Ok(worst),
    }
}
