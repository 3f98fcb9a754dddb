use super::{Matrix, Tape, Var};
use crate::error::{bail, Result};

/// Lower bound on the denominator of the relative error, so that entries whose
/// true gradient is zero are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

/// Compares reverse-mode gradients of the scalar `f(params)` with central
/// finite differences of step `eps`.
pub fn grad_check<F>(f: F, params: &[Matrix], eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    if loss.shape() != (1, 1) {
        bail!(Usage, "grad_check needs a scalar function");
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.wrt(*v).cloned().unwrap_or_else(|| Matrix::zeros(p.dim())))
        .collect();

    let eval = |values: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut values = params.to_vec();
    for (pi, a) in analytic.iter().enumerate() {
        for k in 0..a.len() {
            let orig = values[pi].as_slice().expect("standard layout")[k];
            values[pi].as_slice_mut().unwrap()[k] = orig + eps;
            let up = eval(&values)?;
            values[pi].as_slice_mut().unwrap()[k] = orig - eps;
            let down = eval(&values)?;
            values[pi].as_slice_mut().unwrap()[k] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let exact = a.as_slice().unwrap()[k];
            let abs = (exact - numeric).abs();
            let rel = abs / exact.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if !rel.is_finite() {
                bail!(Numeric, "non-finite gradient comparison at parameter {pi}, entry {k}");
            }
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, k));
            }
        }
    }
    Ok(report)
}
