//! Central finite differences against reverse-mode gradients.

use super::{grad, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of [`check_grad`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst component.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub components: usize,
}

/// Component-wise relative error. Components far below the gradient's overall
/// scale are measured against `1e-3 · scale`, so finite-difference noise on
/// near-zero entries does not dominate.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic
        .abs()
        .max(numeric.abs())
        .max(1e-3 * scale)
        .max(f64::MIN_POSITIVE);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of the scalar `f` at `point`.
pub fn finite_difference<F>(f: F, point: &[Tensor<f64>], eps: f64) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    // Inputs are tape leaves so that objectives containing an inner `grad`
    // call (double backpropagation) evaluate correctly.
    let eval = |p: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = p.iter().cloned().map(|t| tape.leaf(t)).collect();
        Ok(f(&vars)?.value().item())
    };
    let mut work = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut g = Tensor::zeros(point[i].dims());
        for k in 0..point[i].numel() {
            let orig = point[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares reverse-mode gradients of `f` at `point` with central finite
/// differences (step `eps`) and reports the worst relative error.
pub fn check_grad<F>(f: F, point: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::<f64>::new();
    let vars: Vec<_> = point.iter().cloned().map(|t| tape.leaf(t)).collect();
    let out = f(&vars)?;
    let refs: Vec<&Var<f64>> = vars.iter().collect();
    let analytic = grad(&out, &refs, false)?;
    let numeric = finite_difference(&f, point, eps)?;
    Ok(compare_gradients(
        &analytic.iter().map(|g| g.value().clone()).collect::<Vec<_>>(),
        &numeric,
    ))
}

/// Worst component-wise [`relative_error`] between two gradient lists, with
/// the scale taken from `numeric`.
pub fn compare_gradients(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> GradCheckReport {
    let scale = numeric
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        components: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (k, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            report.components += 1;
            let e = relative_error(av, nv, scale);
            if e > report.max_rel_error || (i, k) == (0, 0) {
                report.max_rel_error = report.max_rel_error.max(e);
                report.worst = (i, k);
                report.analytic = av;
                report.numeric = nv;
            }
        }
    }
    report
}
