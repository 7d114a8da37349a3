//! The rebalancing MDP: fleet bookkeeping, the match → rebalance → advance
//! transition, observations, and rewards.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{forecast_rates, sample_episode_demand, DEFAULT_FORECAST_SIGMA};
use crate::flow::{desired_counts, solve_matching, solve_rebalancing, FlowError, PassengerFlow, RebalancingFlow};
use crate::nn::Matrix;
use crate::scenario::{from_cents, Cents, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("episode is over; call reset")]
    EpisodeDone,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("invalid rebalancing flow: {0}")]
    InvalidRebalancing(String),
    #[error("vehicle conservation violated at step {t}: {counted} vehicles counted, fleet is {fleet}")]
    ConservationViolated { t: usize, counted: u64, fleet: u32 },
}

/// Number of node features for planning horizon `k`.
pub fn feature_width(k: usize) -> usize {
    2 * k + 2
}

/// Symmetrically normalised adjacency of the complete graph with self-loops.
pub fn complete_graph_adjacency(n: usize) -> Matrix {
    // D^{-1/2} (J) D^{-1/2} with every degree equal to n
    Matrix::filled(n, n, 1.0 / n as f64)
}

/// Vehicles idle at each station plus those on the road, keyed by arrival step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetState {
    pub t: usize,
    pub idle: Vec<u32>,
    /// `arrivals[s][i]`: vehicles reaching station `i` at absolute step `s`.
    pub arrivals: Vec<Vec<u32>>,
}

impl FleetState {
    pub fn new(t: usize, idle: Vec<u32>, horizon: usize) -> Self {
        let n = idle.len();
        Self { t, idle, arrivals: vec![vec![0; n]; horizon] }
    }

    pub fn n_stations(&self) -> usize {
        self.idle.len()
    }

    pub fn schedule_arrival(&mut self, step: usize, station: usize, count: u32) {
        if step >= self.arrivals.len() {
            self.arrivals.resize(step + 1, vec![0; self.idle.len()]);
        }
        self.arrivals[step][station] += count;
    }

    /// Total vehicles still travelling (arrival after the current step).
    pub fn in_transit(&self) -> u64 {
        self.arrivals.iter().skip(self.t + 1).flatten().map(|&c| u64::from(c)).sum()
    }

    pub fn total_vehicles(&self) -> u64 {
        self.idle.iter().map(|&c| u64::from(c)).sum::<u64>() + self.in_transit()
    }

    /// Idle vehicles expected at each station at step `t + k` if nobody departs.
    pub fn projected_idle(&self, k: usize) -> Vec<u32> {
        let mut out = self.idle.clone();
        for s in self.t + 1..=self.t + k {
            if let Some(row) = self.arrivals.get(s) {
                out.iter_mut().zip(row).for_each(|(o, a)| *o += a);
            }
        }
        out
    }

    /// `(arrival_step, station, count)` for every non-empty in-transit entry.
    pub fn in_transit_entries(&self) -> Vec<(usize, usize, u32)> {
        let mut out = Vec::new();
        for (s, row) in self.arrivals.iter().enumerate().skip(self.t + 1) {
            for (i, &c) in row.iter().enumerate() {
                if c > 0 {
                    out.push((s, i, c));
                }
            }
        }
        out
    }
}

/// Node feature matrix plus the (shared) normalised adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub features: Matrix,
    pub adjacency: Arc<Matrix>,
}

impl Observation {
    pub fn n_stations(&self) -> usize {
        self.features.rows()
    }
}

/// Features `[idle/M, projected idle/M for 1..K, profit potential for t..t+K]`.
///
/// `forecast` holds `K+1` row-major `N×N` rate slices starting at `state.t`.
/// Profit potential is `Σ_j d̂_ij (p_ij − c_ij)`, divided by its largest
/// magnitude over nodes and horizon.
pub fn build_observation(state: &FleetState, scenario: &Scenario, forecast: &[f64], adjacency: Arc<Matrix>) -> Observation {
    let n = scenario.n_stations();
    let k = scenario.plan_horizon();
    let m = f64::from(scenario.fleet_size());
    assert_eq!(forecast.len(), (k + 1) * n * n, "forecast must cover t..t+K");
    let mut x = Matrix::zeros(n, feature_width(k));
    let mut projected = state.idle.clone();
    for i in 0..n {
        x[(i, 0)] = f64::from(projected[i]) / m;
    }
    for step in 1..=k {
        if let Some(row) = state.arrivals.get(state.t + step) {
            projected.iter_mut().zip(row).for_each(|(p, a)| *p += a);
        }
        for i in 0..n {
            x[(i, step)] = f64::from(projected[i]) / m;
        }
    }
    let mut max_abs: f64 = 0.0;
    for h in 0..=k {
        let slice = &forecast[h * n * n..(h + 1) * n * n];
        let tp = state.t + h;
        for i in 0..n {
            let mut v = 0.0;
            for j in 0..n {
                v += slice[i * n + j] * (scenario.price(tp, i, j) - scenario.cost(i, j));
            }
            x[(i, k + 1 + h)] = v;
            max_abs = max_abs.max(v.abs());
        }
    }
    if max_abs > 0.0 {
        for i in 0..n {
            for h in 0..=k {
                x[(i, k + 1 + h)] /= max_abs;
            }
        }
    }
    Observation { t: state.t, features: x, adjacency }
}

/// Per-step accounting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub demand: u64,
    pub served: u64,
    pub unserved: u64,
    pub passenger_profit_cents: Cents,
    pub rebalancing_cost_cents: Cents,
    pub rebalanced_vehicles: u64,
    /// `Σ (d − x)(p − c)⁺`: profit forgone on requests left unserved.
    pub lost_profit_cents: Cents,
}

impl StepInfo {
    pub fn reward_cents(&self) -> Cents {
        self.passenger_profit_cents - self.rebalancing_cost_cents
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_obs: Observation,
    pub reward_cents: Cents,
    pub done: bool,
    pub info: StepInfo,
}

impl StepResult {
    pub fn reward(&self) -> f64 {
        from_cents(self.reward_cents)
    }
}

/// One line of an episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub t: usize,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Relative noise of the demand forecast shown in observations.
    pub forecast_sigma: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { forecast_sigma: DEFAULT_FORECAST_SIGMA }
    }
}

/// Arrival step for a trip of `tau` steps started at `t`; zero-length trips
/// still occupy the vehicle until the next step.
fn arrival(t: usize, tau: u32) -> usize {
    t + tau.max(1) as usize
}

#[derive(Clone)]
pub struct AmodEnv {
    scenario: Arc<Scenario>,
    config: EnvConfig,
    adjacency: Arc<Matrix>,
    state: FleetState,
    demand: Vec<Vec<u32>>,
    last_matching: Option<PassengerFlow>,
    forecast_rng: ChaCha8Rng,
    cost: Vec<Cents>,
    done: bool,
}

impl AmodEnv {
    pub fn new(scenario: Arc<Scenario>, config: EnvConfig) -> Self {
        let n = scenario.n_stations();
        let cost = scenario.cost_matrix_cents();
        Self {
            adjacency: Arc::new(complete_graph_adjacency(n)),
            state: FleetState::new(0, vec![0; n], 0),
            demand: Vec::new(),
            last_matching: None,
            forecast_rng: ChaCha8Rng::seed_from_u64(0),
            cost,
            done: true,
            scenario,
            config,
        }
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> EnvConfig {
        self.config
    }

    pub fn adjacency(&self) -> &Arc<Matrix> {
        &self.adjacency
    }

    pub fn state(&self) -> &FleetState {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.state.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Realised demand at step `t` (pre-drawn at reset). Steps past the rate
    /// tensor reuse the last slice.
    pub fn realized_demand(&self, t: usize) -> &[u32] {
        &self.demand[t.min(self.demand.len() - 1)]
    }

    /// Matching executed at the current step.
    pub fn last_matching(&self) -> Option<&PassengerFlow> {
        self.last_matching.as_ref()
    }

    /// Starts an episode: uniform placement, demand drawn for the whole
    /// horizon, and the first step's requests matched.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let sc = &self.scenario;
        let n = sc.n_stations();
        let m = sc.fleet_size();
        let base = m / n as u32;
        let extra = (m % n as u32) as usize;
        let idle = (0..n).map(|i| base + u32::from(i < extra)).collect();
        let max_tau = (0..n * n).map(|k| sc.travel_time(k / n, k % n)).max().unwrap_or(0).max(1) as usize;
        self.state = FleetState::new(0, idle, sc.episode_len() + max_tau + 2);
        let mut demand_rng = ChaCha8Rng::seed_from_u64(seed);
        self.demand = sample_episode_demand(sc, &mut demand_rng);
        self.forecast_rng = ChaCha8Rng::seed_from_u64(seed);
        self.forecast_rng.set_stream(1);
        self.done = false;
        let (flow, _) = self.match_current().expect("matching on validated scenario");
        self.last_matching = Some(flow);
        self.observe()
    }

    /// Fleet distribution after matching, as a point on the simplex; uniform
    /// when no vehicle is idle.
    pub fn idle_distribution(&self) -> Vec<f64> {
        let total: u32 = self.state.idle.iter().sum();
        let n = self.state.n_stations();
        if total == 0 {
            return vec![1.0 / n as f64; n];
        }
        self.state.idle.iter().map(|&c| f64::from(c) / f64::from(total)).collect()
    }

    /// Noisy forecast slices `t..t+K` for the current step.
    pub fn forecast(&mut self) -> Vec<f64> {
        let sc = &self.scenario;
        let last = sc.n_slices() - 1;
        let mut out = Vec::with_capacity((sc.plan_horizon() + 1) * sc.n_stations().pow(2));
        for h in 0..=sc.plan_horizon() {
            let slice = sc.rate_slice((self.state.t + h).min(last));
            out.extend(forecast_rates(slice, self.config.forecast_sigma, &mut self.forecast_rng));
        }
        out
    }

    pub fn observe(&mut self) -> Observation {
        let fc = self.forecast();
        build_observation(&self.state, &self.scenario, &fc, self.adjacency.clone())
    }

    /// Applies a desired distribution (steps 2 and 3) and advances one step.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let target = desired_counts(action, &self.state.idle)?;
        let y = solve_rebalancing(&self.state.idle, &target, &self.cost)?;
        self.advance(&y)
    }

    /// Executes explicit rebalancing moves (used by MPC) and advances one step.
    pub fn step_with_rebalancing(&mut self, y: &RebalancingFlow) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let n = self.state.n_stations();
        if y.n != n || y.y.len() != n * n {
            return Err(EnvError::InvalidRebalancing(format!("flow for {} stations, environment has {n}", y.n)));
        }
        for i in 0..n {
            if y.get(i, i) != 0 {
                return Err(EnvError::InvalidRebalancing(format!("self-loop at station {i}")));
            }
            let out: u64 = (0..n).map(|j| u64::from(y.get(i, j))).sum();
            if out > u64::from(self.state.idle[i]) {
                return Err(EnvError::InvalidRebalancing(format!(
                    "station {i} sends {out} vehicles but has {} idle",
                    self.state.idle[i]
                )));
            }
        }
        let cost_cents = (0..n * n).map(|k| Cents::from(y.y[k]) * self.cost[k]).sum();
        let y = RebalancingFlow { n, y: y.y.clone(), cost_cents };
        self.advance(&y)
    }

    fn advance(&mut self, y: &RebalancingFlow) -> Result<StepResult, EnvError> {
        let n = self.state.n_stations();
        let t = self.state.t;
        let mut moved = 0u64;
        for i in 0..n {
            for j in 0..n {
                let v = y.get(i, j);
                if v > 0 {
                    self.state.idle[i] -= v;
                    let tau = self.scenario.travel_time(i, j);
                    self.state.schedule_arrival(arrival(t, tau), j, v);
                    moved += u64::from(v);
                }
            }
        }
        self.state.t = t + 1;
        if let Some(row) = self.state.arrivals.get(t + 1) {
            for (idle, &a) in self.state.idle.iter_mut().zip(row) {
                *idle += a;
            }
        }
        let (flow, mut info) = self.match_current()?;
        self.last_matching = Some(flow);
        info.rebalancing_cost_cents = y.cost_cents;
        info.rebalanced_vehicles = moved;
        self.check_conservation()?;
        self.done = self.state.t >= self.scenario.episode_len();
        let next_obs = self.observe();
        Ok(StepResult { next_obs, reward_cents: info.reward_cents(), done: self.done, info })
    }

    /// Matches the current step's requests and dispatches the served trips.
    fn match_current(&mut self) -> Result<(PassengerFlow, StepInfo), EnvError> {
        let sc = self.scenario.clone();
        let n = sc.n_stations();
        let t = self.state.t;
        let price = sc.price_matrix_cents(t);
        let demand = self.realized_demand(t).to_vec();
        let flow = solve_matching(&demand, &price, &self.cost, &self.state.idle)?;
        let mut info = StepInfo { passenger_profit_cents: flow.profit_cents, ..StepInfo::default() };
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let x = flow.x[k];
                let d = demand[k];
                info.demand += u64::from(d);
                info.served += u64::from(x);
                info.unserved += u64::from(d - x);
                info.lost_profit_cents += Cents::from(d - x) * (price[k] - self.cost[k]).max(0);
                if x > 0 {
                    self.state.idle[i] -= x;
                    self.state.schedule_arrival(arrival(t, sc.travel_time(i, j)), j, x);
                }
            }
        }
        Ok((flow, info))
    }

    fn check_conservation(&self) -> Result<(), EnvError> {
        let counted = self.state.total_vehicles();
        let fleet = self.scenario.fleet_size();
        if counted != u64::from(fleet) {
            return Err(EnvError::ConservationViolated { t: self.state.t, counted, fleet });
        }
        Ok(())
    }
}
