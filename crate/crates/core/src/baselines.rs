//! Non-learned controllers: random Dirichlet, equal distribution, greedy
//! demand matching, and receding-horizon MPC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::demand::forecast_rates;
pub use crate::control::{apply, Controller, Decision};
use crate::env::{AmodEnv, EnvError, FleetState, Observation};
use crate::flow::{solve_min_cost_flow, FlowError, FlowProblem, RebalancingFlow};
use crate::nn::DirichletDist;
use crate::scenario::{Cents, Scenario};

pub fn random_policy(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    DirichletDist::uniform(n).sample(rng)
}

pub fn equal_distribution_policy(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Distribution proportional to forecast origin demand averaged over the
/// `K+1` slices of `forecast` (row-major `N×N` each); uniform if all zero.
pub fn greedy_heuristic(forecast: &[f64], n: usize) -> Vec<f64> {
    let slices = forecast.len() / (n * n);
    let mut d = vec![0.0; n];
    for h in 0..slices {
        for i in 0..n {
            d[i] += forecast[h * n * n + i * n..h * n * n + (i + 1) * n].iter().sum::<f64>();
        }
    }
    let total: f64 = d.iter().sum();
    if total <= 0.0 {
        return equal_distribution_policy(n);
    }
    d.iter().map(|v| v / total).collect()
}

pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for RandomController {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, _env: &mut AmodEnv, obs: &Observation) -> Result<Decision, EnvError> {
        Ok(Decision::Distribution(random_policy(obs.n_stations(), &mut self.rng)))
    }
}

pub struct EqualDistributionController;

impl Controller for EqualDistributionController {
    fn name(&self) -> String {
        "ed".into()
    }

    fn decide(&mut self, _env: &mut AmodEnv, obs: &Observation) -> Result<Decision, EnvError> {
        Ok(Decision::Distribution(equal_distribution_policy(obs.n_stations())))
    }
}

/// Noisy forecast slices `t..t+K` from the scenario's rates.
fn forecast_window(scenario: &Scenario, t: usize, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let last = scenario.n_slices() - 1;
    let mut out = Vec::new();
    for h in 0..=scenario.plan_horizon() {
        out.extend(forecast_rates(scenario.rate_slice((t + h).min(last)), sigma, rng));
    }
    out
}

pub struct GreedyController {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl GreedyController {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self { sigma, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for GreedyController {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn decide(&mut self, env: &mut AmodEnv, _obs: &Observation) -> Result<Decision, EnvError> {
        let sc = env.scenario().clone();
        let fc = forecast_window(&sc, env.t(), self.sigma, &mut self.rng);
        Ok(Decision::Distribution(greedy_heuristic(&fc, sc.n_stations())))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MpcError {
    #[error("planning horizon {horizon} from step {t} needs demand past the {available} available slices")]
    HorizonExceedsData { t: usize, horizon: usize, available: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Receding-horizon plan; only `rebalancing[0]` is executed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MpcPlan {
    pub t: usize,
    pub horizon: usize,
    /// Passenger trips per planned step `t+1..=t+horizon` (`N×N` row-major).
    pub passenger: Vec<Vec<u32>>,
    /// Rebalancing moves per planned step `t..t+horizon-1` (`N×N` row-major).
    pub rebalancing: Vec<Vec<u32>>,
    /// Planned passenger profit minus rebalancing cost.
    pub objective_cents: Cents,
}

impl MpcPlan {
    pub fn first_moves(&self, scenario: &Scenario) -> RebalancingFlow {
        let n = scenario.n_stations();
        let y = self.rebalancing.first().cloned().unwrap_or_else(|| vec![0; n * n]);
        let cost_cents = (0..n * n).map(|k| Cents::from(y[k]) * scenario.cost_cents(k / n, k % n)).sum();
        RebalancingFlow { n, y, cost_cents }
    }
}

fn arrival(s: usize, tau: u32) -> usize {
    s + tau.max(1) as usize
}

/// Plans over steps `t..=t+horizon` on a time-expanded network.
///
/// Node `(i, s)` pools the vehicles idle at station `i` in step `s`: the
/// current idle fleet at `s = t`, in-transit arrivals later. Each pooled
/// vehicle stays, serves a request (`s ≥ t+1`, capacity `demand[s-t-1]`), or
/// relocates (`s < t+horizon`). Trips ending after the horizon and the final
/// layer drain into one sink. The network is acyclic and integral, so the
/// min-cost flow is an optimal integer plan.
pub fn mpc_plan(state: &FleetState, scenario: &Scenario, horizon: usize, demand: &[Vec<u32>]) -> Result<MpcPlan, MpcError> {
    let n = scenario.n_stations();
    let t = state.t;
    assert!(demand.len() >= horizon, "one demand slice per planned matching step");
    let layers = horizon + 1;
    let node = |i: usize, s: usize| (s - t) * n + i;
    let sink = layers * n;
    let mut p = FlowProblem::new(sink + 1);
    let mut supply = 0i64;
    for i in 0..n {
        p.balance[node(i, t)] += i64::from(state.idle[i]);
        supply += i64::from(state.idle[i]);
        for s in t + 1..=t + horizon {
            let a = state.arrivals.get(s).map_or(0, |row| row[i]);
            p.balance[node(i, s)] += i64::from(a);
            supply += i64::from(a);
        }
    }
    p.balance[sink] = -supply;
    let end = t + horizon;
    let cap = supply.max(1);
    // (arc index, kind, step, i, j); kind 0 = passenger, 1 = rebalancing
    let mut tagged = Vec::new();
    for s in t..=end {
        let price = scenario.price_matrix_cents(s);
        for i in 0..n {
            let from = node(i, s);
            if s > t {
                let d = &demand[s - t - 1];
                for j in 0..n {
                    let k = i * n + j;
                    let margin = price[k] - scenario.cost_cents(i, j);
                    if d[k] == 0 || margin <= 0 {
                        continue;
                    }
                    let arr = arrival(s, scenario.travel_time(i, j));
                    let to = if arr <= end { node(j, arr) } else { sink };
                    tagged.push((p.add_arc(from, to, i64::from(d[k]), -margin), 0u8, s, i, j));
                }
            }
            if s < end {
                for j in 0..n {
                    let arr = arrival(s, scenario.travel_time(i, j));
                    if j == i || arr > end {
                        continue;
                    }
                    tagged.push((p.add_arc(from, node(j, arr), cap, scenario.cost_cents(i, j)), 1u8, s, i, j));
                }
                p.add_arc(from, node(i, s + 1), cap, 0);
            } else {
                p.add_arc(from, sink, cap, 0);
            }
        }
    }
    let sol = solve_min_cost_flow(&p)?;
    let mut passenger = vec![vec![0u32; n * n]; horizon];
    let mut rebalancing = vec![vec![0u32; n * n]; horizon];
    for (a, kind, s, i, j) in tagged {
        let f = sol.flow[a] as u32;
        if f == 0 {
            continue;
        }
        if kind == 0 {
            passenger[s - t - 1][i * n + j] = f;
        } else {
            rebalancing[s - t][i * n + j] = f;
        }
    }
    Ok(MpcPlan { t, horizon, passenger, rebalancing, objective_cents: -sol.cost })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MpcMode {
    /// Sees the environment's realised future requests.
    Oracle,
    /// Plans on stochastically rounded noisy forecasts.
    Forecast,
}

pub struct MpcController {
    pub mode: MpcMode,
    pub sigma: f64,
    rng: ChaCha8Rng,
    /// Keeps every plan for inspection when set.
    pub record_plans: bool,
    pub plans: Vec<MpcPlan>,
}

impl MpcController {
    pub fn new(mode: MpcMode, sigma: f64, seed: u64) -> Self {
        Self { mode, sigma, rng: ChaCha8Rng::seed_from_u64(seed), record_plans: false, plans: Vec::new() }
    }

    pub fn plan(&mut self, env: &AmodEnv) -> Result<MpcPlan, MpcError> {
        let sc = env.scenario().clone();
        let t = env.t();
        let horizon = sc.plan_horizon().min(sc.episode_len() - t);
        if t + horizon >= sc.n_slices() {
            return Err(MpcError::HorizonExceedsData { t, horizon, available: sc.n_slices() });
        }
        let demand: Vec<Vec<u32>> = (t + 1..=t + horizon)
            .map(|s| match self.mode {
                MpcMode::Oracle => env.realized_demand(s).to_vec(),
                MpcMode::Forecast => {
                    forecast_rates(sc.rate_slice(s), self.sigma, &mut self.rng)
                        .into_iter()
                        .map(|r| stochastic_round(r, &mut self.rng))
                        .collect()
                }
            })
            .collect();
        mpc_plan(env.state(), &sc, horizon, &demand)
    }
}

/// `⌊r⌋ + Bernoulli(r − ⌊r⌋)`: integer with the same mean as `r`.
pub fn stochastic_round(r: f64, rng: &mut impl Rng) -> u32 {
    let f = r.floor();
    let frac = r - f;
    f as u32 + u32::from(frac > 0.0 && rng.gen::<f64>() < frac)
}

impl Controller for MpcController {
    fn name(&self) -> String {
        match self.mode {
            MpcMode::Oracle => "mpc-oracle".into(),
            MpcMode::Forecast => "mpc-forecast".into(),
        }
    }

    fn decide(&mut self, env: &mut AmodEnv, _obs: &Observation) -> Result<Decision, EnvError> {
        let plan = self.plan(env).map_err(|e| match e {
            MpcError::Flow(f) => EnvError::Flow(f),
            other => EnvError::InvalidRebalancing(other.to_string()),
        })?;
        let moves = plan.first_moves(env.scenario());
        if self.record_plans {
            self.plans.push(plan);
        }
        Ok(Decision::Moves(moves))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_distribution_values() {
        assert_eq!(equal_distribution_policy(4), vec![0.25; 4]);
        assert_eq!(equal_distribution_policy(1), vec![1.0]);
        let a = equal_distribution_policy(4);
        assert_eq!(crate::flow::desired_counts(&a, &[8, 0, 0, 0]).unwrap(), vec![2, 2, 2, 2]);
    }

    #[test]
    fn greedy_normalises_origin_demand() {
        // one slice, station 0 has 30 requests, station 1 has 10
        let fc = vec![0.0, 30.0, 10.0, 0.0];
        assert_eq!(greedy_heuristic(&fc, 2), vec![0.75, 0.25]);
        assert_eq!(greedy_heuristic(&[0.0; 8], 2), vec![0.5, 0.5]);
        let scaled: Vec<f64> = fc.iter().map(|v| v * 7.5).collect();
        assert_eq!(greedy_heuristic(&scaled, 2), greedy_heuristic(&fc, 2));
        assert_eq!(greedy_heuristic(&[1.0; 9], 3), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn random_policy_is_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let mut first = 0.0;
        for _ in 0..n {
            let a = random_policy(2, &mut rng);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            first += a[0];
        }
        // Uniform on the 1-simplex: first component ~ U(0,1), sd 1/sqrt(12)
        let se = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((first / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn stochastic_rounding_keeps_integers_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(stochastic_round(3.0, &mut rng), 3);
        let n = 20_000;
        let mean = (0..n).map(|_| f64::from(stochastic_round(2.3, &mut rng))).sum::<f64>() / n as f64;
        assert!((mean - 2.3).abs() < 0.02);
    }
}
