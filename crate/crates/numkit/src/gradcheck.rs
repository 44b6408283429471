//! Central finite-difference checks against reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Floor on the denominator of the relative error, so gradients that are
/// numerically zero on both sides are compared absolutely.
const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares supplied analytic gradients with central differences of `value`.
pub fn compare_gradients<F>(
    value: F,
    inputs: &[Tensor],
    analytic: &[Vec<f64>],
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance,
    };
    for k in 0..inputs.len() {
        for e in 0..inputs[k].len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + FD_STEP;
            let up = value(&work);
            work[k].data_mut()[e] = orig - FD_STEP;
            let down = value(&work);
            work[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[k][e];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((k, e, a, numeric));
            }
        }
    }
    report
}

/// Builds the scalar function `f` on a fresh graph, differentiates it, and
/// compares against central finite differences in every input element.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()]))
        .collect();
    let value = |xs: &[Tensor]| {
        let mut g = Graph::inference();
        let vs: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        f(&mut g, &vs).map(|l| g.value(l).item()).unwrap_or(f64::NAN)
    };
    Ok(compare_gradients(value, inputs, &analytic, tolerance))
}

/// Finite-difference check of every trainable parameter in `store` for a
/// loss built by `f`.
pub fn grad_check_params<F>(f: F, store: &ParamStore, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut s = store.clone();
    s.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, &s)?;
    g.backward_into(loss, &mut s)?;
    let ids: Vec<_> = s.ids().filter(|id| !s.is_frozen(*id)).collect();
    let inputs: Vec<Tensor> = ids.iter().map(|id| s.value(*id).clone()).collect();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|id| s.grad(*id).to_vec()).collect();
    let value = |xs: &[Tensor]| {
        let mut p = store.clone();
        for (id, x) in ids.iter().zip(xs) {
            *p.value_mut(*id).expect("trainable") = x.clone();
        }
        let mut g = Graph::inference();
        f(&mut g, &p).map(|l| g.value(l).item()).unwrap_or(f64::NAN)
    };
    Ok(compare_gradients(value, &inputs, &analytic, tolerance))
}
