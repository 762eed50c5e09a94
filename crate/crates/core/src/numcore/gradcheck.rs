//! Finite-difference verification of the tape's backward rules.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::Result;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error below this magnitude is measured against the floor instead.
const REL_FLOOR: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Checks the gradient of a scalar-valued graph with respect to every input.
///
/// `build` records the computation on a fresh `f64` tape given one leaf per
/// input and returns the one-element output.
pub fn grad_check_many<F>(build: F, inputs: &[Tensor<f64>], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        tol,
        passed: true,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.tensor(*v);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            let rel = rel_err(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(op_under_test: F, input: &Tensor<f64>, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|t, v| op_under_test(t, v[0]), std::slice::from_ref(input), step, tol)
}

/// Reduces any tensor to a scalar through a fixed projection `Σ r_i y_i`.
///
/// Used to check ops whose output is not already scalar; `weights` must have
/// as many entries as `y`.
pub fn project(tape: &mut Tape<f64>, y: Var, weights: &[f64]) -> Result<Var> {
    let n = tape.value(y).len();
    let flat = tape.reshape(y, vec![n])?;
    let w = tape.constant(Tensor::new(vec![1, n], weights.to_vec())?);
    let b = tape.constant(Tensor::from_vec(vec![0.0]));
    let out = tape.linear(flat, w, b)?;
    tape.reshape(out, Vec::<usize>::new())
}
