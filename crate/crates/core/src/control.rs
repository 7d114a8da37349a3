//! The controller interface shared by heuristics, MPC and learned agents, and
//! the episode loop that drives any of them.

use serde::{Deserialize, Serialize};

use crate::agents::{ActionMode, SacAgent};
use crate::env::{AmodEnv, EnvError, Observation, StepResult};
use crate::flow::RebalancingFlow;
use crate::scenario::{from_cents, Cents};

/// What a controller asks the environment to do this step.
#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    /// Desired idle-vehicle distribution, turned into moves by the rebalancing LP.
    Distribution(Vec<f64>),
    /// Explicit rebalancing moves.
    Moves(RebalancingFlow),
}

pub trait Controller {
    fn name(&self) -> String;

    fn decide(&mut self, env: &mut AmodEnv, obs: &Observation) -> Result<Decision, EnvError>;
}

/// Applies a decision to the environment.
pub fn apply(env: &mut AmodEnv, decision: &Decision) -> Result<StepResult, EnvError> {
    match decision {
        Decision::Distribution(a) => env.step(a),
        Decision::Moves(y) => env.step_with_rebalancing(y),
    }
}

/// The decision as a point on the simplex: the distribution itself, or the
/// idle distribution that explicit moves produce.
pub fn decision_action(env: &AmodEnv, decision: &Decision) -> Vec<f64> {
    match decision {
        Decision::Distribution(a) => a.clone(),
        Decision::Moves(y) => {
            let counts = y.resulting_counts(&env.state().idle);
            let total: u32 = counts.iter().sum();
            if total == 0 {
                vec![1.0 / counts.len() as f64; counts.len()]
            } else {
                counts.iter().map(|&c| f64::from(c) / f64::from(total)).collect()
            }
        }
    }
}

/// Totals over one episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub steps: usize,
    pub reward_cents: Cents,
    pub demand: u64,
    pub served: u64,
    pub rebalancing_cost_cents: Cents,
    pub lost_profit_cents: Cents,
}

impl EpisodeSummary {
    pub fn reward(&self) -> f64 {
        from_cents(self.reward_cents)
    }

    pub fn rebalancing_cost(&self) -> f64 {
        from_cents(self.rebalancing_cost_cents)
    }

    pub fn lost_profit(&self) -> f64 {
        from_cents(self.lost_profit_cents)
    }
}

/// Runs one episode from `env.reset(seed)`. `visit` sees every step as
/// `(observation, action on the simplex, result)`.
pub fn run_episode(
    env: &mut AmodEnv,
    controller: &mut dyn Controller,
    seed: u64,
    mut visit: impl FnMut(&Observation, &[f64], &StepResult),
) -> Result<EpisodeSummary, EnvError> {
    let mut obs = env.reset(seed);
    let mut sum = EpisodeSummary { seed, ..EpisodeSummary::default() };
    loop {
        let decision = controller.decide(env, &obs)?;
        let action = decision_action(env, &decision);
        let r = apply(env, &decision)?;
        visit(&obs, &action, &r);
        sum.steps += 1;
        sum.reward_cents += r.reward_cents;
        sum.demand += r.info.demand;
        sum.served += r.info.served;
        sum.rebalancing_cost_cents += r.info.rebalancing_cost_cents;
        sum.lost_profit_cents += r.info.lost_profit_cents;
        obs = r.next_obs;
        if r.done {
            return Ok(sum);
        }
    }
}

/// Seed of episode `k` in a run seeded with `base`.
pub fn episode_seed(base: u64, k: u64) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(k)
}

/// A trained agent acting through its Dirichlet policy.
pub struct AgentPolicy<'a> {
    pub agent: &'a mut SacAgent,
    pub mode: ActionMode,
}

impl Controller for AgentPolicy<'_> {
    fn name(&self) -> String {
        "agent".into()
    }

    fn decide(&mut self, _env: &mut AmodEnv, obs: &Observation) -> Result<Decision, EnvError> {
        Ok(Decision::Distribution(self.agent.select_action(obs, self.mode)))
    }
}
