//! Poisson trip-demand sampling and noisy demand forecasts.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::special::ln_gamma;
use crate::scenario::Scenario;

/// Default relative standard deviation of forecast noise.
pub const DEFAULT_FORECAST_SIGMA: f64 = 0.2;

/// Draws from Poisson(`lambda`). Inversion by sequential search below 10,
/// transformed rejection with squeeze (PTRS) above.
pub fn sample_poisson(lambda: f64, rng: &mut impl Rng) -> u32 {
    debug_assert!(lambda >= 0.0 && lambda.is_finite());
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < 10.0 {
        let mut k = 0u32;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let u: f64 = rng.gen();
        while u > cdf {
            k += 1;
            p *= lambda / f64::from(k);
            cdf += p;
            if p < 1e-300 && cdf >= 1.0 - 1e-15 {
                break;
            }
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u32;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = -lambda + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u32;
        }
    }
}

/// Realises one `N×N` demand matrix (row-major) from a rate slice.
pub fn sample_demand(rates: &[f64], rng: &mut impl Rng) -> Vec<u32> {
    rates.iter().map(|&l| sample_poisson(l, rng)).collect()
}

/// Realises the full `(T+K)×N×N` demand tensor of a scenario.
pub fn sample_episode_demand(scenario: &Scenario, rng: &mut impl Rng) -> Vec<Vec<u32>> {
    (0..scenario.n_slices()).map(|t| sample_demand(scenario.rate_slice(t), rng)).collect()
}

/// Noisy forecast of a rate slice: `max(0, λ(1+ε))`, `ε ~ N(0, σ²)` per entry.
pub fn forecast_rates(rates: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    rates
        .iter()
        .map(|&l| {
            let eps: f64 = rng.sample(StandardNormal);
            (l * (1.0 + sigma * eps)).max(0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| sample_poisson(0.0, &mut rng) == 0));
    }

    #[test]
    fn mean_and_variance_match_across_both_regimes() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for lambda in [0.3, 2.5, 9.9, 10.0, 37.0, 400.0] {
            let n = 50_000;
            let xs: Vec<f64> = (0..n).map(|_| f64::from(sample_poisson(lambda, &mut rng))).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() < 4.5 * se, "lambda {lambda}: mean {mean}");
            assert!((var / lambda - 1.0).abs() < 0.05, "lambda {lambda}: var {var}");
        }
    }

    #[test]
    fn pmf_matches_for_moderate_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = 14.0;
        let n = 100_000;
        let mut counts = vec![0u32; 60];
        for _ in 0..n {
            counts[sample_poisson(lambda, &mut rng).min(59) as usize] += 1;
        }
        for k in 8..22 {
            let p = (-lambda + k as f64 * lambda.ln() - ln_gamma(k as f64 + 1.0)).exp();
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - p).abs() < 5.0 * sd, "k={k}: {freq} vs {p}");
        }
    }

    #[test]
    fn forecast_is_non_negative_and_unbiased_for_small_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rates = vec![2.0; 20_000];
        let f = forecast_rates(&rates, 0.2, &mut rng);
        assert!(f.iter().all(|&v| v >= 0.0));
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        assert!((mean - 2.0).abs() < 0.02);
        assert_eq!(forecast_rates(&[3.0], 0.0, &mut rng), vec![3.0]);
    }
}
