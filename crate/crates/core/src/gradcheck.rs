//! Central finite-difference verification of tape adjoints.

use serde::Serialize;

use crate::autodiff::{Primitive, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub rel_error: f64,
    pub max_abs_grad: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }
}

/// Relative error of one parameter tensor: the largest absolute discrepancy
/// divided by the larger of the two gradient magnitudes (floored at 1e-8).
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    diff / analytic.max_abs().max(numeric.max_abs()).max(1e-8)
}

/// Compares tape adjoints against central differences for every named
/// parameter. `loss` receives the tape and one leaf per parameter, in order,
/// and must return a scalar node. When `fault` is set the analytic pass uses a
/// tape with that primitive's adjoint scaled, which should make the check fail.
pub fn gradient_check<F>(
    params: &[(String, Tensor)],
    loss: F,
    step: f64,
    tolerance: f64,
    fault: Option<(Primitive, f64)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let l = loss(&mut tape, &leaves)?;
        tape.value(l).item()
    };

    let mut tape = match fault {
        Some((p, f)) => Tape::with_fault(p, f),
        None => Tape::new(),
    };
    let leaves: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let l = loss(&mut tape, &leaves)?;
    let grads = tape.backward(l)?;

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (k, (name, original)) in params.iter().enumerate() {
        let analytic = grads.wrt(leaves[k], original);
        let mut numeric = Tensor::zeros(original.rows(), original.cols());
        for i in 0..original.len() {
            let x = original.data()[i];
            values[k].data_mut()[i] = x + step;
            let plus = eval(&values)?;
            values[k].data_mut()[i] = x - step;
            let minus = eval(&values)?;
            values[k].data_mut()[i] = x;
            numeric.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        let rel_error = relative_error(&analytic, &numeric);
        checks.push(ParamCheck {
            name: name.clone(),
            rel_error,
            max_abs_grad: analytic.max_abs(),
            passed: rel_error < tolerance,
        });
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradCheckReport {
        step,
        tolerance,
        params: checks,
        passed,
    })
}
