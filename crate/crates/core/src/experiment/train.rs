//! Online (SAC, fine-tuning) and offline (CQL, Cal-CQL) training loops.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{compute_reference_values, ActionMode, AgentError, Batch, Losses, Regularizer, ReplayBuffer, SacAgent, TrainConfig, Transition};
use crate::control::{episode_seed, AgentPolicy};
use crate::env::{feature_width, AmodEnv, EnvConfig, EnvError};
use crate::nn::Checkpoint;
use crate::scenario::Scenario;

use super::eval::evaluate;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// One line of an online training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Environment steps taken so far, this episode included.
    pub interactions: u64,
    pub reward: f64,
    pub served: u64,
    pub demand: u64,
    pub rebalancing_cost: f64,
    pub lost_profit: f64,
    pub updates: u64,
    pub losses: Losses,
}

/// One line of an offline training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub step: u64,
    pub losses: Losses,
    pub policy_q: f64,
}

/// Evaluated parameter snapshot taken during online training.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub episode: usize,
    /// Mean-action validation reward.
    pub score: f64,
    /// Validation reward of the stochastic policy, i.e. as a behaviour policy.
    pub behavior_score: f64,
    pub checkpoint: Checkpoint,
}

fn take_snapshot(agent: &mut SacAgent, episode: usize, scenario: &Arc<Scenario>, opts: &OnlineOptions) -> Result<Snapshot, TrainError> {
    let checkpoint = agent.to_checkpoint();
    let score = evaluate_agent(agent, scenario, opts.seed, opts.snapshot_eval_episodes, opts.forecast_sigma, ActionMode::Mean)?;
    let mut behavior = SacAgent::from_checkpoint(&checkpoint, opts.seed)?;
    let behavior_score = evaluate_agent(&mut behavior, scenario, opts.seed, opts.snapshot_eval_episodes, opts.forecast_sigma, ActionMode::Sample)?;
    Ok(Snapshot { episode, score, behavior_score, checkpoint })
}

#[derive(Clone, Debug)]
pub struct OnlineOptions {
    pub episodes: usize,
    pub seed: u64,
    pub forecast_sigma: f64,
    pub regularizer: Regularizer,
    /// Evaluate and keep a snapshot every this many episodes.
    pub snapshot_every: Option<usize>,
    pub snapshot_eval_episodes: usize,
}

impl OnlineOptions {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            seed,
            forecast_sigma: EnvConfig::default().forecast_sigma,
            regularizer: Regularizer::None,
            snapshot_every: None,
            snapshot_eval_episodes: 5,
        }
    }
}

pub struct OnlineRun {
    pub agent: SacAgent,
    pub log: Vec<EpisodeLog>,
    pub snapshots: Vec<Snapshot>,
}

/// A fresh agent sized for `scenario`.
pub fn new_agent(config: TrainConfig, scenario: &Scenario, seed: u64) -> SacAgent {
    SacAgent::new(config, scenario.n_stations(), feature_width(scenario.plan_horizon()), seed)
}

/// Draws a training batch: `offline_fraction` of it from `offline` (if any),
/// the rest from the online buffer.
fn mixed_batch(buffer: &ReplayBuffer, offline: Option<&[Transition]>, batch: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Batch {
    use rand::Rng;
    let mut items: Vec<&Transition> = Vec::with_capacity(batch);
    let n_off = offline.map_or(0, |_| (batch as f64 * fraction).round() as usize);
    if let Some(off) = offline {
        items.extend((0..n_off).map(|_| &off[rng.gen_range(0..off.len())]));
    }
    items.extend(buffer.sample(batch - n_off, rng));
    Batch::from_transitions(&items)
}

/// Trains online with one gradient step per environment step.
///
/// With `offline` set, each batch mixes in `offline_batch_fraction` dataset
/// samples (fine-tuning). Under the calibrated regulariser, online transitions
/// enter the buffer when their episode ends, carrying Monte-Carlo returns.
pub fn train_online(
    scenario: Arc<Scenario>,
    mut agent: SacAgent,
    opts: &OnlineOptions,
    offline: Option<&[Transition]>,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<OnlineRun, TrainError> {
    let cfg = agent.config.clone();
    let mut env = AmodEnv::new(scenario.clone(), EnvConfig { forecast_sigma: opts.forecast_sigma });
    let mut buffer = ReplayBuffer::new(cfg.buffer_size);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(4);
    let online_batch = cfg.batch_size - offline.map_or(0, |_| (cfg.batch_size as f64 * cfg.offline_batch_fraction).round() as usize);
    let calibrated = opts.regularizer == Regularizer::Calibrated;
    let mut log = Vec::with_capacity(opts.episodes);
    let mut snapshots = Vec::new();
    if opts.snapshot_every.is_some() {
        snapshots.push(take_snapshot(&mut agent, 0, &scenario, opts)?);
    }
    let mut interactions = 0u64;
    let mut losses = Losses::default();
    for e in 0..opts.episodes {
        let mut obs = env.reset(episode_seed(opts.seed, e as u64));
        let mut entry = EpisodeLog { episode: e, ..EpisodeLog::default() };
        let mut pending = Vec::new();
        loop {
            let a = agent.select_action(&obs, ActionMode::Sample);
            let r = env.step(&a)?;
            interactions += 1;
            entry.reward += r.reward();
            entry.served += r.info.served;
            entry.demand += r.info.demand;
            entry.rebalancing_cost += crate::scenario::from_cents(r.info.rebalancing_cost_cents);
            entry.lost_profit += crate::scenario::from_cents(r.info.lost_profit_cents);
            let tr = agent.transition(&obs, &a, r.reward(), &r.next_obs, r.done);
            if calibrated {
                pending.push(tr);
            } else {
                buffer.push(tr);
            }
            if buffer.len() >= online_batch.max(1) {
                let batch = mixed_batch(&buffer, offline, cfg.batch_size, cfg.offline_batch_fraction, &mut rng);
                losses = agent.update(&batch, opts.regularizer)?;
            }
            obs = r.next_obs;
            if r.done {
                break;
            }
        }
        if calibrated {
            let rewards: Vec<f64> = pending.iter().map(|t| t.reward).collect();
            let dones: Vec<bool> = pending.iter().map(|t| t.done).collect();
            let v = compute_reference_values(&rewards, &dones, cfg.gamma).expect("episode ends with done");
            for (mut t, v) in pending.into_iter().zip(v) {
                t.mc_return = Some(v);
                buffer.push(t);
            }
        }
        entry.interactions = interactions;
        entry.updates = agent.updates();
        entry.losses = losses;
        on_episode(&entry);
        log.push(entry);
        if let Some(every) = opts.snapshot_every {
            if (e + 1) % every == 0 {
                snapshots.push(take_snapshot(&mut agent, e + 1, &scenario, opts)?);
            }
        }
    }
    Ok(OnlineRun { agent, log, snapshots })
}

/// Validation episodes are disjoint from both training and evaluation episodes.
const VALIDATION_SEED_OFFSET: u64 = 1 << 41;

/// Mean episode reward on validation episode seeds.
pub fn evaluate_agent(agent: &mut SacAgent, scenario: &Arc<Scenario>, seed: u64, episodes: usize, sigma: f64, mode: ActionMode) -> Result<f64, EnvError> {
    let mut policy = AgentPolicy { agent, mode };
    let res = evaluate(scenario, &mut policy, &[seed.wrapping_add(VALIDATION_SEED_OFFSET)], episodes, sigma)?;
    Ok(res.mean())
}

/// Trains from a fixed dataset for `steps` gradient steps; no environment
/// interaction. `on_log` fires every `log_every` steps.
pub fn train_offline(
    agent: &mut SacAgent,
    data: &[Transition],
    steps: u64,
    reg: Regularizer,
    seed: u64,
    log_every: u64,
    mut on_log: impl FnMut(&UpdateLog),
) -> Result<Vec<UpdateLog>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    let b = agent.config.batch_size;
    let mut out = Vec::new();
    for step in 1..=steps {
        let items: Vec<&Transition> = (0..b).map(|_| &data[rng.gen_range(0..data.len())]).collect();
        let batch = Batch::from_transitions(&items);
        let losses = agent.update(&batch, reg)?;
        if log_every > 0 && (step % log_every == 0 || step == steps) {
            let policy_q = agent.policy_q_mean(&batch);
            let entry = UpdateLog { step, losses, policy_q };
            on_log(&entry);
            out.push(entry);
        }
    }
    Ok(out)
}
