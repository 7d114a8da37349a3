//! Central finite-difference oracle for taped computations.
//!
//! Probes whose ±h stencil crosses a non-smooth branch (ReLU kink, clamp
//! boundary, min/max switch) are reported as skipped rather than compared.

use super::matrix::Matrix;
use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub skipped: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn eval_inputs(inputs: &[Matrix], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> (f64, Vec<bool>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars);
    (tape.value(out).item(), tape.nonsmooth_signature())
}

/// Checks `d f / d inputs[k][idx]` for each `(k, idx)` in `coords`.
pub fn check_inputs(
    inputs: &[Matrix],
    f: &dyn Fn(&mut Tape, &[Var]) -> Var,
    coords: &[(usize, usize)],
    h: f64,
) -> Vec<Probe> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars);
    let base_sig = tape.nonsmooth_signature();
    let grads = tape.backward(out);
    coords
        .iter()
        .map(|&(k, idx)| {
            let analytic = grads.wrt(vars[k]).map_or(0.0, |g| g.data()[idx]);
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= h;
            let (fp, sp) = eval_inputs(&plus, f);
            let (fm, sm) = eval_inputs(&minus, f);
            let numeric = (fp - fm) / (2.0 * h);
            let skipped = sp != base_sig || sm != base_sig;
            Probe { analytic, numeric, rel_err: relative_error(analytic, numeric), skipped }
        })
        .collect()
}

/// Checks gradients with respect to entries of a parameter set. `f` must build
/// its scalar loss reading parameters from the set it is given.
pub fn check_params(
    params: &mut ParamSet,
    f: &dyn Fn(&mut Tape, &ParamSet) -> Var,
    coords: &[(ParamId, usize)],
    h: f64,
) -> Vec<Probe> {
    params.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, params);
    let base_sig = tape.nonsmooth_signature();
    let grads = tape.backward(out);
    tape.accumulate_into(&grads, params);
    let analytic: Vec<f64> = coords.iter().map(|&(id, idx)| params.grad(id).data()[idx]).collect();
    params.zero_grad();
    let eval = |params: &ParamSet| {
        let mut t = Tape::no_grad();
        let o = f(&mut t, params);
        (t.value(o).item(), t.nonsmooth_signature())
    };
    coords
        .iter()
        .zip(analytic)
        .map(|(&(id, idx), analytic)| {
            let orig = params.value(id).data()[idx];
            params.value_mut(id).data_mut()[idx] = orig + h;
            let (fp, sp) = eval(params);
            params.value_mut(id).data_mut()[idx] = orig - h;
            let (fm, sm) = eval(params);
            params.value_mut(id).data_mut()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let skipped = sp != base_sig || sm != base_sig;
            Probe { analytic, numeric, rel_err: relative_error(analytic, numeric), skipped }
        })
        .collect()
}

/// Largest relative error over non-skipped probes, and how many were compared.
pub fn worst(probes: &[Probe]) -> (f64, usize) {
    probes.iter().filter(|p| !p.skipped).fold((0.0, 0), |(w, n), p| (w.max(p.rel_err), n + 1))
}
