//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward function, so it is
//! independent of every backward closure it is used to check.

use super::{no_grad, Result, Tensor};

/// Default perturbation.
pub const STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries whose true gradient
/// is (analytically) zero are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of a scalar function with respect to each element of
/// each input.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: F, h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for x in inputs {
        let n = x.numel();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let plus = no_grad(|| f(inputs))?.item();
            x.data_mut()[i] = orig - h;
            let minus = no_grad(|| f(inputs))?.item();
            x.data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compares backward-pass gradients against central differences.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for x in inputs {
        x.zero_grad();
    }
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.grad().unwrap_or_else(|| vec![0.0; x.numel()]))
        .collect();
    let numeric = numeric_gradients(inputs, &f, STEP)?;
    let mut report = GradReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&a, &n) in a.iter().zip(n) {
            report.max_rel_err = report.max_rel_err.max(rel_err(a, n));
            report.max_abs_err = report.max_abs_err.max((a - n).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}
