//! Central finite-difference verification of backward rules.
//!
//! The error measure for one array is `‖analytic − numeric‖₂ / max(‖analytic‖₂,
//! ‖numeric‖₂, 1e-6)`, so arrays whose true gradient is zero are compared
//! absolutely.

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-6)
}

/// Checks gradients with respect to free inputs of a scalar function.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<GradReport>>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&tape, &vars)?;
    tape.backward(root, &mut ParamStore::new())?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&tape, &vars)?;
        Ok(tape.scalar(root))
    };

    let mut reports = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .map(Tensor::into_data)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut work = inputs.to_vec();
        let mut numeric = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        reports.push(report(format!("input{i}"), &analytic, &numeric));
    }
    Ok(reports)
}

/// Checks gradients with respect to every parameter in `store`.
pub fn check_params<F>(store: &ParamStore, step: f64, f: F) -> Result<Vec<GradReport>>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var>,
{
    let mut analytic_store = store.clone();
    analytic_store.zero_grads();
    let tape = Tape::new();
    let root = f(&tape, &analytic_store)?;
    tape.backward(root, &mut analytic_store)?;

    let mut work = store.clone();
    let mut reports = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.get(id).value.numel();
        let mut numeric = Vec::with_capacity(n);
        for j in 0..n {
            let orig = store.get(id).value.data()[j];
            work.get_mut(id).value.data_mut()[j] = orig + step;
            let plus = {
                let t = Tape::new();
                let r = f(&t, &work)?;
                t.scalar(r)
            };
            work.get_mut(id).value.data_mut()[j] = orig - step;
            let minus = {
                let t = Tape::new();
                let r = f(&t, &work)?;
                t.scalar(r)
            };
            work.get_mut(id).value.data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let p = analytic_store.get(id);
        reports.push(report(p.name.clone(), p.grad.data(), &numeric));
    }
    Ok(reports)
}

fn report(name: String, analytic: &[f64], numeric: &[f64]) -> GradReport {
    GradReport {
        name,
        rel_error: relative_error(analytic, numeric),
        analytic_norm: analytic.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// Largest error across reports, for single-threshold assertions.
pub fn worst(reports: &[GradReport]) -> f64 {
    reports.iter().map(|r| r.rel_error).fold(0.0, f64::max)
}
