//! Central-difference auditing of analytic gradients.
//!
//! The checked function is supplied as a tape builder so the same closure
//! yields both the analytic gradients (one recorded backward pass) and the
//! plain forward values used for finite differences.

use crate::error::{Result, SailError};
use crate::store::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per-parameter maximum relative error, in store order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tol: f64,
    /// Parameters whose error exceeded the tolerance, or whose evaluation
    /// produced a non-finite value.
    pub failures: Vec<String>,
    pub passed: bool,
}

impl GradCheckReport {
    fn from_errors(per_param: Vec<(String, f64)>, failures: Vec<String>, tol: f64) -> Self {
        let max_rel_err = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        let passed = failures.is_empty() && max_rel_err < tol;
        GradCheckReport { per_param, max_rel_err, tol, failures, passed }
    }
}

/// Relative error with a small-denominator guard. Entries where both sides
/// sit below the resolution of central differences (cancellation noise is
/// about ulp(f)/step, around 1e-10 for unit-scale losses) count as
/// agreeing.
fn rel_err(a: f64, b: f64) -> f64 {
    if a.abs() < 1e-7 && b.abs() < 1e-7 {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Evaluate the builder's scalar loss at the store's current parameters.
fn eval_loss<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = build(store, &mut tape)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(SailError::invalid("grad_check", "loss must be scalar"));
    }
    Ok(v.data()[0])
}

/// Central finite differences of the builder's loss w.r.t. every parameter
/// entry.
pub fn finite_difference_grads<F>(
    store: &ParamStore,
    build: &F,
    step: f64,
) -> Result<Vec<(String, Tensor)>>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let mut scratch = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for slot in 0..store.len() {
        let mut fd = Tensor::zeros(store.param(slot).dims().to_vec());
        for i in 0..store.param(slot).len() {
            let orig = scratch.param(slot).data()[i];
            scratch.param_mut(slot).data_mut()[i] = orig + step;
            let plus = eval_loss(&scratch, build)?;
            scratch.param_mut(slot).data_mut()[i] = orig - step;
            let minus = eval_loss(&scratch, build)?;
            scratch.param_mut(slot).data_mut()[i] = orig;
            fd.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push((store.name(slot).to_string(), fd));
    }
    Ok(out)
}

/// Analytic gradients from one recorded backward pass, densified to one
/// tensor per parameter (unreachable parameters get zeros).
pub fn analytic_grads<F>(store: &ParamStore, build: &F) -> Result<Vec<(String, Tensor)>>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = build(store, &mut tape)?;
    let grads = tape.param_grads(loss)?;
    let mut dense: Vec<(String, Tensor)> = (0..store.len())
        .map(|s| (store.name(s).to_string(), Tensor::zeros(store.param(s).dims().to_vec())))
        .collect();
    for (slot, g) in grads {
        dense[slot].1 = g;
    }
    Ok(dense)
}

/// Compare two gradient sets entry by entry.
pub fn compare_grads(
    analytic: &[(String, Tensor)],
    numeric: &[(String, Tensor)],
    tol: f64,
) -> GradCheckReport {
    let mut per_param = Vec::with_capacity(analytic.len());
    let mut failures = Vec::new();
    for ((name, a), (_, n)) in analytic.iter().zip(numeric) {
        if !a.is_finite() || !n.is_finite() {
            failures.push(name.clone());
            per_param.push((name.clone(), f64::INFINITY));
            continue;
        }
        let err = a
            .data()
            .iter()
            .zip(n.data())
            .map(|(&x, &y)| rel_err(x, y))
            .fold(0.0, f64::max);
        if err >= tol {
            failures.push(name.clone());
        }
        per_param.push((name.clone(), err));
    }
    GradCheckReport::from_errors(per_param, failures, tol)
}

/// Full audit: analytic gradients against central differences at `step`,
/// failing any parameter whose max relative error reaches `tol` or whose
/// evaluation is non-finite.
pub fn grad_check<F>(store: &ParamStore, build: &F, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let base = eval_loss(store, build)?;
    if !base.is_finite() {
        return Ok(GradCheckReport::from_errors(
            vec![("<loss>".to_string(), f64::INFINITY)],
            vec!["<loss>".to_string()],
            tol,
        ));
    }
    let analytic = analytic_grads(store, build)?;
    let numeric = finite_difference_grads(store, build, step)?;
    Ok(compare_grads(&analytic, &numeric, tol))
}
