//! Central finite-difference gradient checks.
//!
//! The error measure is `|analytic - numeric| / max(1, |analytic|)`, maximised
//! over coordinates.

use crate::autodiff::params::{GradStore, ParamSet};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "finite-difference epsilon must be positive, got {epsilon}"
        )))
    }
}

fn eval_scalar<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), false);
    let y = f(&mut tape, x)?;
    tape.scalar_value(y)
}

/// Compares the tape gradient of `f` at `point` with central differences.
pub fn gradient_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    check_epsilon(epsilon)?;
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let y = f(&mut tape, x)?;
    tape.backward(y, &mut GradStore::empty())?;
    let analytic = match tape.grad(x) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; point.numel()],
    };

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let minus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Per-parameter outcome of [`gradient_check_params`].
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_error: f64,
}

/// Gradient check over every scalar of every parameter in `params`.
///
/// `loss` must be deterministic in the parameters (fix any noise it draws).
pub fn gradient_check_params<F>(
    params: &mut ParamSet,
    loss: F,
    epsilon: f64,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    check_epsilon(epsilon)?;
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::with_params(params);
        let y = loss(&mut tape)?;
        tape.scalar_value(y)
    };

    let mut grads = GradStore::for_params(params);
    {
        let mut tape = Tape::with_params(params);
        let y = loss(&mut tape)?;
        tape.backward(y, &mut grads)?;
    }

    let ids: Vec<_> = params.ids().collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let mut worst = 0.0f64;
        for i in 0..params.value(id).numel() {
            let orig = params.value(id).data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + epsilon;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig - epsilon;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(grads.get(id).data()[i], numeric));
        }
        report.push(ParamCheck {
            name: params.get(id).name.clone(),
            max_error: worst,
        });
    }
    Ok(report)
}
