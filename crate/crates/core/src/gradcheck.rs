//! Central finite-difference gradient checking.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Perturbation is `step * max(1, |x|)`.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`,
    /// so gradients far below `floor` are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-6,
            floor: 1e-4,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub worst: Option<Discrepancy>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} over {} values (tol {:.0e}) {}",
            self.max_rel_error,
            self.checked,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if let Some(w) = self.worst {
            write!(
                f,
                "; worst at input {} elem {}: analytic {:.6e} numeric {:.6e}",
                w.input, w.element, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

fn evaluate<F>(f: &mut F, inputs: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::shape("gradient_check", "function must return a scalar"));
    }
    Ok(v.item())
}

/// Compare the tape gradient of a scalar function against central differences
/// with respect to every element of every input.
///
/// `f` is re-run once per perturbation and must be deterministic (reseed any
/// randomness inside it).
pub fn gradient_check<F>(mut f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(*v).cloned().expect("leaf gradient"))
        .collect();
    drop(tape);

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tolerance: opts.tolerance,
        checked: 0,
        worst: None,
    };
    for i in 0..work.len() {
        for j in 0..work[i].len() {
            let x0 = work[i].data()[j];
            let h = opts.step * x0.abs().max(1.0);
            work[i].data_mut()[j] = x0 + h;
            let plus = evaluate(&mut f, &work)?;
            work[i].data_mut()[j] = x0 - h;
            let minus = evaluate(&mut f, &work)?;
            work[i].data_mut()[j] = x0;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(Discrepancy {
                    input: i,
                    element: j,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
