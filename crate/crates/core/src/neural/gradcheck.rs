use super::params::{Bound, ParameterSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub n_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor so that vanishing gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks the tape gradient of a scalar-valued `forward` with respect to
/// every coordinate of `params`.
pub fn gradient_check<F>(
    forward: F,
    params: &ParameterSet,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = forward(&mut tape, &bound)?;
    let grads = tape.backward(root)?;
    let analytic = bound.gradients(&grads, params);
    compare_with_differences(&analytic, |p| evaluate(&forward, p), params, tolerance)
}

fn evaluate<F>(forward: &F, params: &ParameterSet) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let root = forward(&mut tape, &bound)?;
    Ok(tape.value(root).item())
}

/// Compares supplied analytic gradients with central differences of `value`.
pub fn compare_with_differences<V>(
    analytic: &[Tensor],
    value: V,
    params: &ParameterSet,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    V: Fn(&ParameterSet) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        n_checked: 0,
        tolerance,
    };
    for (i, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let original = probe.tensor(i).data()[k];
            probe.values_mut(i)[k] = original + FD_STEP;
            let up = value(&probe)?;
            probe.values_mut(i)[k] = original - FD_STEP;
            let down = value(&probe)?;
            probe.values_mut(i)[k] = original;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(g.data()[k], numeric);
            report.n_checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((params.names()[i].clone(), k));
            }
        }
    }
    Ok(report)
}
