//! Central-difference gradient checking.

use super::param::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

fn eval_scalar<F>(params: &ParamSet, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    let v = tape.scalar(out);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("grad_check objective".into()))
    }
}

/// Largest relative discrepancy between the tape gradient of `f` and a
/// central difference, over every scalar of every parameter.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(params: &ParamSet, step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("grad_check step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    let analytic = params.collect_grads(&tape, out, &bound)?;

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.numel() {
            let orig = work.get(pi).value().data()[k];
            work.get_mut(pi).value_mut()[k] = orig + step;
            let plus = eval_scalar(&work, &f)?;
            work.get_mut(pi).value_mut()[k] = orig - step;
            let minus = eval_scalar(&work, &f)?;
            work.get_mut(pi).value_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if !rel.is_finite() {
                return Err(Error::NonFinite("grad_check difference".into()));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
