use alloc::string::String;
use alloc::vec::Vec;

use super::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst_coordinate: Option<(String, usize)>,
    pub passed: bool,
    pub tolerance: f64,
    pub checked: usize,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Checks `f` at `x` with tolerance 1e-6.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var, TensorError>,
{
    let mut store = ParamStore::new();
    let id = store.insert("x", x.clone());
    grad_check_params(&mut store, None, eps, 1e-6, |g| {
        let v = g.param(id);
        f(g, v)
    })
}

/// Finite-difference formula for the numeric gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    Central,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error O(h^4).
    FivePoint,
}

/// Central-difference check of the scalar built by `f` with respect to the
/// parameters in `only` (all of them when `None`). Parameter values are
/// restored before returning.
pub fn grad_check_params<E, F>(
    store: &mut ParamStore,
    only: Option<&[ParamId]>,
    eps: f64,
    tolerance: f64,
    f: F,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
{
    grad_check_params_with(store, only, Stencil::Central, eps, tolerance, f)
}

/// [`grad_check_params`] with an explicit stencil.
pub fn grad_check_params_with<E, F>(
    store: &mut ParamStore,
    only: Option<&[ParamId]>,
    stencil: Stencil,
    eps: f64,
    tolerance: f64,
    f: F,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        Ok(g.scalar(loss))
    };
    let targets: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_coordinate: None,
        passed: true,
        tolerance,
        checked: 0,
        per_param: Vec::new(),
    };
    for id in targets {
        let n = store.get(id).numel();
        let analytic: Vec<f64> = grads.get(id).map_or_else(|| alloc::vec![0.0; n], <[f64]>::to_vec);
        let mut worst = 0.0f64;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).data[i];
            let mut at = |h: f64| {
                store.get_mut(id).data[i] = orig + h;
                let y = eval(store);
                store.get_mut(id).data[i] = orig;
                y
            };
            let numeric = match stencil {
                Stencil::Central => (at(eps)? - at(-eps)?) / (2.0 * eps),
                Stencil::FivePoint => {
                    (8.0 * (at(eps)? - at(-eps)?) - (at(2.0 * eps)? - at(-2.0 * eps)?)) / (12.0 * eps)
                }
            };
            let err = relative_error(a, numeric);
            report.checked += 1;
            worst = worst.max(err);
            if err > report.max_relative_error || report.worst_coordinate.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst_coordinate = Some((store.name(id).into(), i));
            }
        }
        report.per_param.push((store.name(id).into(), worst));
    }
    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}
