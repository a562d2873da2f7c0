//! Central finite-difference gradient checks.

use super::params::{BoundParams, ParamVector};
use super::tape::{Tape, Var};
use super::AutodiffError;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
///
/// `f` builds a scalar on a fresh tape from bound parameters; it must be pure.
pub fn finite_diff_check<F, E>(f: F, theta: &ParamVector, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let analytic = analytic_gradient(&f, theta)?;
    let numeric = numeric_gradient(&f, theta, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn analytic_gradient<F, E>(f: &F, theta: &ParamVector) -> Result<Vec<f64>, E>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut tape = Tape::new();
    let bound = theta.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    let grads = tape.grad_values(out, &bound.vars)?;
    Ok(grads.into_iter().flat_map(|t| t.into_data()).collect())
}

pub fn numeric_gradient<F, E>(f: &F, theta: &ParamVector, eps: f64) -> Result<Vec<f64>, E>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let flat = theta.flatten();
    let eval = |values: &[f64]| -> Result<f64, E> {
        let pv = theta.with_flat(values)?;
        let mut tape = Tape::new();
        let bound = pv.bind(&mut tape);
        let out = f(&mut tape, &bound)?;
        Ok(tape.scalar(out))
    };
    let mut probe = flat.clone();
    let mut out = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        probe[i] = flat[i] + eps;
        let plus = eval(&probe)?;
        probe[i] = flat[i] - eps;
        let minus = eval(&probe)?;
        probe[i] = flat[i];
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}
