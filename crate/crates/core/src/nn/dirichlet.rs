//! Gamma and Dirichlet sampling plus the Dirichlet log-density, in plain and
//! taped (differentiable) form.

use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::special::ln_gamma;
use super::tape::{log_gamma_from_noise, logsumexp, GammaNoise, Tape, Var};
use super::NnError;

/// Simplex components are clamped to `[ε, 1-ε]` before taking logs.
pub const LOG_PROB_CLAMP: f64 = 1e-6;

/// Draws `ln z` with `z ~ Gamma(shape, 1)` and returns the accepted noise.
///
/// Marsaglia–Tsang for `shape >= 1`; below one the shape is boosted by one and
/// the draw is multiplied by `u^(1/shape)`. Working in log space keeps tiny
/// shapes from underflowing to zero.
pub fn sample_log_gamma(shape: f64, rng: &mut impl Rng) -> (f64, GammaNoise) {
    debug_assert!(shape > 0.0 && shape.is_finite());
    let boost_uniform = if shape < 1.0 { Some(1.0 - rng.gen::<f64>()) } else { None };
    let base = if boost_uniform.is_some() { shape + 1.0 } else { shape };
    let d = base - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let w = 1.0 + c * x;
        if w <= 0.0 {
            continue;
        }
        let v = w * w * w;
        let u = 1.0 - rng.gen::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            let noise = GammaNoise { normal: x, boost_uniform };
            return (log_gamma_from_noise(shape, &noise).0, noise);
        }
    }
}

pub fn sample_gamma(shape: f64, rng: &mut impl Rng) -> f64 {
    sample_log_gamma(shape, rng).0.exp()
}

/// Dirichlet distribution over the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletDist {
    concentration: Vec<f64>,
}

impl DirichletDist {
    pub fn new(concentration: Vec<f64>) -> Result<Self, NnError> {
        if concentration.is_empty() {
            return Err(NnError::InvalidConcentration("empty concentration".into()));
        }
        if let Some(c) = concentration.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(NnError::InvalidConcentration(format!("component {c} is not a positive finite real")));
        }
        Ok(Self { concentration })
    }

    /// Symmetric Dirichlet(1, ..., 1): uniform on the simplex.
    pub fn uniform(n: usize) -> Self {
        Self { concentration: vec![1.0; n] }
    }

    pub fn concentration(&self) -> &[f64] {
        &self.concentration
    }

    pub fn dim(&self) -> usize {
        self.concentration.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let total: f64 = self.concentration.iter().sum();
        self.concentration.iter().map(|c| c / total).collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let logs: Vec<f64> = self.concentration.iter().map(|&c| sample_log_gamma(c, rng).0).collect();
        normalize_log_weights(&logs)
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.concentration.len(), "log_prob dimension");
        let x = clamp_to_interior(x);
        let total: f64 = self.concentration.iter().sum();
        let mut lp = ln_gamma(total);
        for (&c, &xi) in self.concentration.iter().zip(&x) {
            lp += (c - 1.0) * xi.ln() - ln_gamma(c);
        }
        lp
    }
}

/// Clamps each component to `[ε, 1-ε]` and renormalises.
pub fn clamp_to_interior(x: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = x.iter().map(|v| v.clamp(LOG_PROB_CLAMP, 1.0 - LOG_PROB_CLAMP)).collect();
    let s: f64 = clamped.iter().sum();
    clamped.iter().map(|v| v / s).collect()
}

fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logs);
    logs.iter().map(|l| (l - lse).exp().max(f64::MIN_POSITIVE)).collect()
}

/// Row-wise Dirichlet log-density on a tape: `conc` and `x` are `B×N`, result `B×1`.
pub fn log_prob_rows(tape: &mut Tape, conc: Var, x: Var) -> Var {
    let xc = tape.clamp(x, LOG_PROB_CLAMP, 1.0 - LOG_PROB_CLAMP);
    let xs = tape.row_sum(xc);
    let xn = tape.div_col(xc, xs);
    let total = tape.row_sum(conc);
    let lg_total = tape.ln_gamma(total);
    let lg_each = tape.ln_gamma(conc);
    let lg_sum = tape.row_sum(lg_each);
    let cm1 = tape.add_scalar(conc, -1.0);
    let logx = tape.log(xn);
    let weighted = tape.mul(cm1, logx);
    let dot = tape.row_sum(weighted);
    let norm = tape.sub(lg_total, lg_sum);
    tape.add(norm, dot)
}

/// Reparameterised Dirichlet draw on a tape: `conc` is `B×N`, result `B×N`
/// rows on the simplex, differentiable in `conc` through the Gamma transform.
pub fn rsample_rows(tape: &mut Tape, conc: Var, rng: &mut impl Rng) -> Var {
    let noise: Vec<GammaNoise> = tape.value(conc).data().iter().map(|&c| sample_log_gamma(c, rng).1).collect();
    let logz = tape.log_gamma_sample(conc, Rc::new(noise));
    let lse = tape.logsumexp_rows(logz);
    let centered = tape.sub_col(logz, lse);
    tape.exp(centered)
}

/// Independent draws for each row of a `B×N` concentration matrix (not recorded).
pub fn sample_rows(conc: &super::Matrix, rng: &mut impl Rng) -> super::Matrix {
    let mut out = super::Matrix::zeros(conc.rows(), conc.cols());
    for r in 0..conc.rows() {
        let logs: Vec<f64> = conc.row(r).iter().map(|&c| sample_log_gamma(c, rng).0).collect();
        out.row_mut(r).copy_from_slice(&normalize_log_weights(&logs));
    }
    out
}
