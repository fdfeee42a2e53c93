//! Central finite-difference oracle for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Relative error used throughout the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &mut F, x: &Tensor) -> Result<f64>
where
    F: FnMut(&mut Tape, &Var) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    f(&mut tape, &v)?.value().item()
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences over every coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, eps, &coords)
}

/// As [`finite_diff_check`], restricted to the flat indices in `coords`.
pub fn finite_diff_check_at<F>(mut f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut(&mut Tape, &Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::arg("eps", format!("{eps} outside [1e-6, 1e-3]")));
    }
    if let Some(&bad) = coords.iter().find(|&&i| i >= x.numel()) {
        return Err(Error::arg("coords", format!("index {bad} out of range")));
    }
    let first = evaluate(&mut f, x)?;
    let second = evaluate(&mut f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Nondeterministic { first, second });
    }

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let loss = f(&mut tape, &leaf)?;
    tape.backward(&loss)?;
    let analytic = tape.grad_or_zeros(&leaf);

    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        let (hi, lo) = (orig + eps, orig - eps);
        probe[i] = hi;
        let plus = evaluate(&mut f, &Tensor::from_shape(x.shape().clone(), probe.clone())?)?;
        probe[i] = lo;
        let minus = evaluate(&mut f, &Tensor::from_shape(x.shape().clone(), probe.clone())?)?;
        probe[i] = orig;
        // divide by the step actually taken after rounding
        let numeric = (plus - minus) / (hi - lo);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
