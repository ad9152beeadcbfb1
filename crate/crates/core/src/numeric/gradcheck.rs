//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use super::{BoundParams, ParamStore, Tape, Var};
use crate::Error;

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    Central,
    /// `(f(x−2h) − 8f(x−h) + 8f(x+h) − f(x+2h)) / 12h`, error `O(h⁴)`.
    FivePoint,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    pub stencil: Stencil,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator. A central difference
    /// carries about `ε·|loss|/step` absolute roundoff (~1e-10 here), so
    /// entries smaller than the floor are effectively compared absolutely.
    pub denominator_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            stencil: Stencil::Central,
            tolerance: 1e-4,
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

fn evaluate<F>(loss_fn: &F, params: &ParamStore) -> Result<f64, Error>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, Error>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound)?;
    Ok(tape.value(loss).item())
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every entry of every tensor in `params`.
///
/// A non-finite loss at any perturbed point is returned as
/// [`Error::NonFiniteLoss`].
pub fn grad_check<F>(
    loss_fn: F,
    params: &ParamStore,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, Error>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, Error>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss_var = loss_fn(&mut tape, &bound)?;
    let loss = tape.value(loss_var).item();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            param: None,
            index: 0,
        });
    }
    let grads = tape.backward(loss_var)?;

    let mut probe = params.clone();
    let mut reports = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        let var = bound.get(name)?;
        let analytic = grads.get(var);
        let mut check = ParamCheck {
            name: name.to_string(),
            entries: tensor.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..tensor.len() {
            let original = tensor.data()[i];
            let mut at = |value: f64| -> Result<f64, Error> {
                probe
                    .get_mut(name)
                    .expect("probe mirrors params")
                    .data_mut()[i] = value;
                let l = evaluate(&loss_fn, &probe)?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        param: Some(name.to_string()),
                        index: i,
                    });
                }
                Ok(l)
            };
            let h = config.step;
            let numeric = match config.stencil {
                Stencil::Central => (at(original + h)? - at(original - h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    let (p1, m1) = (at(original + h)?, at(original - h)?);
                    let (p2, m2) = (at(original + 2.0 * h)?, at(original - 2.0 * h)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
                }
            };
            probe
                .get_mut(name)
                .expect("probe mirrors params")
                .data_mut()[i] = original;
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let denom = a.abs().max(numeric.abs()).max(config.denominator_floor);
            let rel = (a - numeric).abs() / denom;
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        reports.push(check);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss,
        tolerance: config.tolerance,
        max_rel_error,
        passed: max_rel_error < config.tolerance,
        params: reports,
    })
}
