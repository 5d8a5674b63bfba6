//! Central finite-difference verification of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Step used for central differences at 64-bit precision.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_parameter_errors: Vec<(String, f64)>,
}

/// A scalar objective over a set of named parameter tensors.
pub trait Checkable {
    fn param_count(&self) -> usize;
    fn param_name(&self, index: usize) -> String;
    fn param_mut(&mut self, index: usize) -> &mut Tensor;
    fn loss(&self) -> Result<f64>;
    /// Analytic gradients, one tensor per parameter in index order.
    fn gradients(&mut self) -> Result<Vec<Tensor>>;
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn gradcheck<C: Checkable>(target: &mut C, step: f64) -> Result<GradCheckReport> {
    let analytic = target.gradients()?;
    if analytic.len() != target.param_count() {
        return Err(Error::shape("gradcheck", "one gradient per parameter required"));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_parameter_errors: Vec::with_capacity(analytic.len()),
    };
    for (p, grad) in analytic.iter().enumerate() {
        let name = target.param_name(p);
        if grad.len() != target.param_mut(p).len() {
            return Err(Error::shape("gradcheck", format!("gradient of {name} has wrong length")));
        }
        let mut worst = 0.0f64;
        for i in 0..grad.len() {
            let original = target.param_mut(p).data()[i];
            let mut eval = |value: f64, tag: &str| -> Result<f64> {
                target.param_mut(p).data_mut()[i] = value;
                let l = target.loss()?;
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("loss with {name}[{i}] {tag}")));
                }
                Ok(l)
            };
            let plus = eval(original + step, "+h");
            let minus = eval(original - step, "-h");
            target.param_mut(p).data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * step);
            worst = worst.max(rel_error(grad.data()[i], numeric));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_parameter_errors.push((name, worst));
    }
    Ok(report)
}

/// Adapts a closure returning `(loss, gradients)` into a [`Checkable`].
pub struct FnObjective<F> {
    names: Vec<String>,
    params: Vec<Tensor>,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    pub fn new(params: Vec<(String, Tensor)>, f: F) -> Self {
        let (names, params) = params.into_iter().unzip();
        FnObjective { names, params, f }
    }
}

impl<F> Checkable for FnObjective<F>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn param_name(&self, index: usize) -> String {
        self.names[index].clone()
    }

    fn param_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.params[index]
    }

    fn loss(&self) -> Result<f64> {
        Ok((self.f)(&self.params)?.0)
    }

    fn gradients(&mut self) -> Result<Vec<Tensor>> {
        Ok((self.f)(&self.params)?.1)
    }
}
