//! Central-difference verification of tape gradients.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Largest step accepted for 64-bit checks.
pub const MAX_STEP: f64 = 1e-3;
/// Smallest step accepted for 64-bit checks.
pub const MIN_STEP: f64 = 1e-6;

/// Max over all coordinates of `|analytic − central| / max(1, |central|)`
/// for the scalar function `f` at `x`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, h, &all)
}

/// Same as [`finite_diff_check`], restricted to the listed coordinates.
pub fn finite_diff_check_at<T, F>(f: F, x: &Tensor<T>, h: f64, coords: &[usize]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(MIN_STEP..=MAX_STEP).contains(&h) {
        return Err(TensorError::Parameter {
            op: "finite_diff_check",
            msg: format!("step {h} outside [{MIN_STEP}, {MAX_STEP}]"),
        });
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |point: Tensor<T>| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let v = tape.constant(point);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item().as_f64())
    };
    let step = T::lit(h);
    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let central = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (analytic.data()[i].as_f64() - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
