//! Soft actor-critic with twin critics, plus the conservative (CQL) and
//! calibrated (Cal-CQL) critic regularisers for offline training.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{Batch, Transition};
use super::nets::{ActorNet, CriticArch, CriticVariant, NetError};
use crate::env::Observation;
use crate::nn::dirichlet::{log_prob_rows, rsample_rows, sample_rows, DirichletDist};
use crate::nn::special::ln_gamma;
use crate::nn::{Adam, AdamConfig, Checkpoint, Matrix, NnError, ParamSet, Tape};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch lacks reference values required by the calibrated regulariser")]
    MissingReferenceValues,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// How the actor loss is differentiated through the Dirichlet sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorGradient {
    /// Implicit reparameterisation through the Gamma sampler.
    Pathwise,
    /// Likelihood-ratio estimator, sampled actions held constant, with a
    /// leave-one-out baseline over `actor_samples` draws per state.
    ScoreFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub entropy_alpha: f64,
    pub polyak_tau: f64,
    pub reward_scale: f64,
    pub hidden: usize,
    pub critic_variant: CriticVariant,
    pub actor_gradient: ActorGradient,
    pub actor_samples: usize,
    /// Regulariser weight; also the initial value when adapted.
    pub cql_eta: f64,
    /// Dual threshold; negative keeps `cql_eta` fixed.
    pub cql_threshold_tau: f64,
    pub eta_lr: f64,
    /// Importance samples per proposal (uniform Dirichlet and current policy).
    pub n_importance_samples: usize,
    pub offline_batch_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.97,
            buffer_size: 200_000,
            batch_size: 100,
            entropy_alpha: 0.3,
            polyak_tau: 0.005,
            reward_scale: 0.01,
            hidden: 32,
            critic_variant: CriticVariant::Critic4,
            actor_gradient: ActorGradient::ScoreFunction,
            actor_samples: 4,
            cql_eta: 1.0,
            cql_threshold_tau: -1.0,
            eta_lr: 1e-3,
            n_importance_samples: 10,
            offline_batch_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    /// Offline defaults: slower actor and critic learning rates.
    pub fn offline() -> Self {
        Self { actor_lr: 1e-4, critic_lr: 3e-4, ..Self::default() }
    }
}

/// Critic regulariser applied on top of the Bellman loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    None,
    Conservative,
    Calibrated,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    /// Mean conservative gap `lse − Q(s, a_D)` over both critics (0 for plain SAC).
    pub regularizer: f64,
    pub eta: f64,
    pub q_data_mean: f64,
}

/// Scalars from one critic loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStats {
    pub bellman: f64,
    /// `mean_s [log (1/n Σ_k exp(Q(s,a_k) − log q(a_k)))] − mean Q(s, a_D)`.
    pub gap: f64,
    pub q_data_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Mean,
}

/// Twin-critic actor-critic learner.
pub struct SacAgent {
    pub config: TrainConfig,
    pub actor: ActorNet,
    pub critic: CriticArch,
    pub q1: ParamSet,
    pub q2: ParamSet,
    pub q1_target: ParamSet,
    pub q2_target: ParamSet,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    log_eta: ParamSet,
    eta_opt: Adam,
    n_nodes: usize,
    n_features: usize,
    rng: ChaCha8Rng,
    is_rng: ChaCha8Rng,
    updates: u64,
}

impl SacAgent {
    pub fn new(config: TrainConfig, n_nodes: usize, n_features: usize, seed: u64) -> Self {
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let actor = ActorNet::new(n_features, config.hidden, &mut init);
        let (critic, q1) = CriticArch::new(config.critic_variant, n_features, n_nodes, config.hidden, &mut init);
        let (_, q2) = CriticArch::new(config.critic_variant, n_features, n_nodes, config.hidden, &mut init);
        let mut log_eta = ParamSet::new();
        log_eta.add("log_eta", Matrix::scalar(config.cql_eta.max(1e-12).ln()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut is_rng = ChaCha8Rng::seed_from_u64(seed);
        is_rng.set_stream(3);
        Self {
            actor_opt: Adam::new(&actor.params, AdamConfig::with_lr(config.actor_lr)),
            q1_opt: Adam::new(&q1, AdamConfig::with_lr(config.critic_lr)),
            q2_opt: Adam::new(&q2, AdamConfig::with_lr(config.critic_lr)),
            eta_opt: Adam::new(&log_eta, AdamConfig::with_lr(config.eta_lr)),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            log_eta,
            actor,
            critic,
            n_nodes,
            n_features,
            rng,
            is_rng,
            updates: 0,
            config,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Current regulariser weight.
    pub fn eta(&self) -> f64 {
        if self.config.cql_threshold_tau < 0.0 {
            self.config.cql_eta
        } else {
            self.log_eta.flat_values()[0].exp()
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Re-seeds the sampling streams (used when resuming from a checkpoint).
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(2);
        self.is_rng = ChaCha8Rng::seed_from_u64(seed);
        self.is_rng.set_stream(3);
    }

    /// Switches optimiser step sizes, e.g. from offline to online settings.
    pub fn set_learning_rates(&mut self, actor_lr: f64, critic_lr: f64) {
        self.config.actor_lr = actor_lr;
        self.config.critic_lr = critic_lr;
        self.actor_opt.config.lr = actor_lr;
        self.q1_opt.config.lr = critic_lr;
        self.q2_opt.config.lr = critic_lr;
    }

    pub fn concentration(&self, obs: &Observation) -> Vec<f64> {
        let adj = Rc::new((*obs.adjacency).clone());
        self.actor.concentration(&adj, &obs.features).into_vec()
    }

    pub fn select_action(&mut self, obs: &Observation, mode: ActionMode) -> Vec<f64> {
        let conc = self.concentration(obs);
        let dist = DirichletDist::new(conc).expect("softplus output is positive");
        match mode {
            ActionMode::Mean => dist.mean(),
            ActionMode::Sample => dist.sample(&mut self.rng),
        }
    }

    /// Builds a stored transition, applying the reward scale.
    pub fn transition(&self, obs: &Observation, action: &[f64], reward: f64, next: &Observation, done: bool) -> Transition {
        Transition {
            obs: obs.features.clone(),
            action: action.to_vec(),
            reward: reward * self.config.reward_scale,
            next_obs: next.features.clone(),
            done,
            mc_return: None,
        }
    }

    fn adjacency(&self, n: usize) -> Rc<Matrix> {
        Rc::new(crate::env::complete_graph_adjacency(n))
    }

    /// Soft Bellman targets `r + γ(1−done)(min Q̄(s', a') − α log π(a'|s'))`.
    pub fn bellman_targets(&mut self, batch: &Batch) -> Vec<f64> {
        let adj = self.adjacency(batch.n);
        let conc = self.actor.concentration(&adj, &batch.next_obs);
        let a_next = sample_rows(&conc, &mut self.rng);
        let mut tape = Tape::no_grad();
        let cv = tape.constant(conc);
        let av = tape.constant(a_next.clone());
        let lp = log_prob_rows(&mut tape, cv, av);
        let logp = tape.value(lp).data().to_vec();
        let q1 = self.critic.q_values(&self.q1_target, &adj, &batch.next_obs, &a_next);
        let q2 = self.critic.q_values(&self.q2_target, &adj, &batch.next_obs, &a_next);
        let c = &self.config;
        (0..batch.b)
            .map(|i| {
                let cont = if batch.dones[i] { 0.0 } else { 1.0 };
                batch.rewards[i] + c.gamma * cont * (q1[i].min(q2[i]) - c.entropy_alpha * logp[i])
            })
            .collect()
    }

    /// Importance-sampling proposals for every state: `n` uniform-Dirichlet
    /// draws then `n` policy draws, state-major, with their log densities.
    pub fn importance_samples(&mut self, batch: &Batch) -> (Matrix, Vec<f64>) {
        let n_is = self.config.n_importance_samples;
        let nn = batch.n;
        let adj = self.adjacency(nn);
        let conc = self.actor.concentration(&adj, &batch.obs);
        let uniform = DirichletDist::uniform(nn);
        let log_uniform = ln_gamma(nn as f64);
        let mut actions = Matrix::zeros(batch.b * 2 * n_is, nn);
        let mut log_q = Vec::with_capacity(batch.b * 2 * n_is);
        for s in 0..batch.b {
            let pol = DirichletDist::new(conc.row(s).to_vec()).expect("positive concentration");
            for k in 0..2 * n_is {
                let a = if k < n_is { uniform.sample(&mut self.is_rng) } else { pol.sample(&mut self.is_rng) };
                log_q.push(if k < n_is { log_uniform } else { pol.log_prob(&a) });
                actions.row_mut(s * 2 * n_is + k).copy_from_slice(&a);
            }
        }
        (actions, log_q)
    }

    /// One gradient step on both critics, the actor, `η` (if adapted), and
    /// the target networks.
    pub fn update(&mut self, batch: &Batch, reg: Regularizer) -> Result<Losses, AgentError> {
        if batch.b == 0 {
            return Err(AgentError::EmptyBatch);
        }
        if reg == Regularizer::Calibrated && batch.mc_returns.is_none() {
            return Err(AgentError::MissingReferenceValues);
        }
        let targets = self.bellman_targets(batch);
        let proposals = if reg == Regularizer::None { None } else { Some(self.importance_samples(batch)) };
        let eta = self.eta();
        let mut losses = Losses { eta, ..Losses::default() };

        let mut gaps = [0.0; 2];
        for which in 0..2 {
            let (bell, gap, q_mean) = self.critic_step(which, batch, &targets, proposals.as_ref(), reg, eta)?;
            gaps[which] = gap;
            if which == 0 {
                losses.critic1 = bell;
                losses.q_data_mean = q_mean;
            } else {
                losses.critic2 = bell;
            }
        }
        if reg != Regularizer::None {
            losses.regularizer = 0.5 * (gaps[0] + gaps[1]);
            if self.config.cql_threshold_tau >= 0.0 {
                // d/d(log η) of −η·(gap − τ)
                let g = -eta * (losses.regularizer - self.config.cql_threshold_tau);
                let id = self.log_eta.ids().next().expect("log_eta");
                self.log_eta.grad_mut(id).data_mut()[0] = g;
                self.eta_opt.step(&mut self.log_eta)?;
            }
        }
        losses.actor = self.actor_step(batch)?;
        self.q1_target.polyak_from(&self.q1, self.config.polyak_tau);
        self.q2_target.polyak_from(&self.q2, self.config.polyak_tau);
        self.updates += 1;
        Ok(losses)
    }

    /// Returns (Bellman MSE, conservative gap, mean data Q).
    fn critic_step(
        &mut self,
        which: usize,
        batch: &Batch,
        targets: &[f64],
        proposals: Option<&(Matrix, Vec<f64>)>,
        reg: Regularizer,
        eta: f64,
    ) -> Result<(f64, f64, f64), AgentError> {
        let stats = self.critic_gradients(which, batch, targets, proposals, reg, eta);
        let (params, opt) = if which == 0 { (&mut self.q1, &mut self.q1_opt) } else { (&mut self.q2, &mut self.q2_opt) };
        opt.step(params)?;
        Ok((stats.bellman, stats.gap, stats.q_data_mean))
    }

    /// Writes the critic loss gradient into the grad fields of critic
    /// `which` (0 or 1), replacing whatever was there.
    ///
    /// `proposals` holds `2·n_importance_samples` actions per state with their
    /// log proposal densities; `None` gives the plain Bellman loss.
    pub fn critic_gradients(
        &mut self,
        which: usize,
        batch: &Batch,
        targets: &[f64],
        proposals: Option<&(Matrix, Vec<f64>)>,
        reg: Regularizer,
        eta: f64,
    ) -> CriticStats {
        let adj = self.adjacency(batch.n);
        let params = if which == 0 { &mut self.q1 } else { &mut self.q2 };
        params.zero_grad();
        let mut tape = Tape::new();
        let x = tape.constant(batch.obs.clone());
        let a = tape.constant(batch.actions.clone());
        let q = self.critic.forward(&mut tape, params, adj.clone(), x, a, 1);
        let y = tape.constant(Matrix::column(targets));
        let diff = tape.sub(q, y);
        let sq = tape.square(diff);
        let bell = tape.mean(sq);
        let q_data_mean = tape.value(q).mean();
        let mut gap_value = 0.0;
        let mut loss = bell;
        if let Some((acts, log_q)) = proposals {
            let reps = acts.rows() / batch.b;
            let av = tape.constant(acts.clone());
            let mut q_is = self.critic.forward(&mut tape, params, adj, x, av, reps);
            if reg == Regularizer::Calibrated {
                let v = batch.mc_returns.as_ref().expect("checked by caller");
                let floor: Vec<f64> = v.iter().flat_map(|&r| std::iter::repeat(r).take(reps)).collect();
                let fv = tape.constant(Matrix::column(&floor));
                q_is = tape.max(q_is, fv);
            }
            let lq = tape.constant(Matrix::column(log_q));
            let z = tape.sub(q_is, lq);
            let z = tape.reshape(z, batch.b, reps);
            let lse = tape.logsumexp_rows(z);
            let lse = tape.add_scalar(lse, -(reps as f64).ln());
            let lse_mean = tape.mean(lse);
            let q_data = tape.mean(q);
            let gap = tape.sub(lse_mean, q_data);
            gap_value = tape.value(gap).item();
            let weighted = tape.scale(gap, eta);
            loss = tape.add(bell, weighted);
        }
        let bellman = tape.value(bell).item();
        let grads = tape.backward(loss);
        tape.accumulate_into(&grads, params);
        CriticStats { bellman, gap: gap_value, q_data_mean }
    }

    fn actor_step(&mut self, batch: &Batch) -> Result<f64, AgentError> {
        let adj = self.adjacency(batch.n);
        let alpha = self.config.entropy_alpha;
        let mut tape = Tape::new();
        let x = tape.constant(batch.obs.clone());
        let conc = self.actor.forward(&mut tape, adj.clone(), x);
        let reported;
        let loss = match self.config.actor_gradient {
            ActorGradient::Pathwise => {
                let a = rsample_rows(&mut tape, conc, &mut self.rng);
                let logp = log_prob_rows(&mut tape, conc, a);
                tape.set_frozen(true);
                let q1 = self.critic.forward(&mut tape, &self.q1, adj.clone(), x, a, 1);
                let q2 = self.critic.forward(&mut tape, &self.q2, adj, x, a, 1);
                tape.set_frozen(false);
                let qmin = tape.min(q1, q2);
                let ent = tape.scale(logp, alpha);
                let per = tape.sub(ent, qmin);
                let loss = tape.mean(per);
                reported = tape.value(loss).item();
                loss
            }
            ActorGradient::ScoreFunction => {
                let s = self.config.actor_samples.max(2);
                let conc_v = tape.value(conc).clone();
                let mut acts = Matrix::zeros(batch.b * s, batch.n);
                for r in 0..batch.b {
                    let d = DirichletDist::new(conc_v.row(r).to_vec()).expect("positive concentration");
                    for k in 0..s {
                        acts.row_mut(r * s + k).copy_from_slice(&d.sample(&mut self.rng));
                    }
                }
                let conc_rep = tape.repeat_blocks(conc, 1, s);
                let av = tape.constant(acts.clone());
                let logp = log_prob_rows(&mut tape, conc_rep, av);
                let lp = tape.value(logp).data().to_vec();
                let x_rep = {
                    let mut t2 = Tape::no_grad();
                    let xv = t2.constant(batch.obs.clone());
                    let xr = t2.repeat_blocks(xv, batch.n, s);
                    t2.value(xr).clone()
                };
                let q1 = self.critic.q_values(&self.q1, &adj, &x_rep, &acts);
                let q2 = self.critic.q_values(&self.q2, &adj, &x_rep, &acts);
                let cost: Vec<f64> = (0..batch.b * s).map(|k| alpha * lp[k] - q1[k].min(q2[k])).collect();
                reported = cost.iter().sum::<f64>() / cost.len() as f64;
                let mut adv = vec![0.0; cost.len()];
                for r in 0..batch.b {
                    let block = &cost[r * s..(r + 1) * s];
                    let total: f64 = block.iter().sum();
                    for k in 0..s {
                        adv[r * s + k] = block[k] - (total - block[k]) / (s - 1) as f64;
                    }
                }
                let advv = tape.constant(Matrix::column(&adv));
                let sur = tape.mul(logp, advv);
                tape.mean(sur)
            }
        };
        let grads = tape.backward(loss);
        tape.accumulate_into(&grads, &mut self.actor.params);
        self.actor_opt.step(&mut self.actor.params)?;
        Ok(reported)
    }

    /// Mean of `min(Q1, Q2)(s, a)` with `a ~ π(·|s)` over the batch states.
    pub fn policy_q_mean(&mut self, batch: &Batch) -> f64 {
        let adj = self.adjacency(batch.n);
        let conc = self.actor.concentration(&adj, &batch.obs);
        let a = sample_rows(&conc, &mut self.rng);
        let q1 = self.critic.q_values(&self.q1, &adj, &batch.obs, &a);
        let q2 = self.critic.q_values(&self.q2, &adj, &batch.obs, &a);
        q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).sum::<f64>() / batch.b as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.put("actor", &self.actor.params);
        ck.put("q1", &self.q1);
        ck.put("q2", &self.q2);
        ck.put("q1_target", &self.q1_target);
        ck.put("q2_target", &self.q2_target);
        ck.put("log_eta", &self.log_eta);
        let meta: BTreeMap<String, String> = [
            ("n_nodes", self.n_nodes.to_string()),
            ("n_features", self.n_features.to_string()),
            ("config", serde_json::to_string(&self.config).expect("config serialises")),
            ("updates", self.updates.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        ck.meta = meta;
        ck
    }

    /// Rebuilds an agent from a checkpoint. Optimiser moments start fresh.
    pub fn from_checkpoint(ck: &Checkpoint, seed: u64) -> Result<Self, AgentError> {
        let get = |k: &str| ck.meta.get(k).ok_or_else(|| AgentError::Checkpoint(format!("missing meta field {k}")));
        let parse = |k: &str| -> Result<usize, AgentError> {
            get(k)?.parse().map_err(|_| AgentError::Checkpoint(format!("bad meta field {k}")))
        };
        let config: TrainConfig =
            serde_json::from_str(get("config")?).map_err(|e| AgentError::Checkpoint(format!("config: {e}")))?;
        let mut agent = Self::new(config, parse("n_nodes")?, parse("n_features")?, seed);
        ck.restore("actor", &mut agent.actor.params)?;
        ck.restore("q1", &mut agent.q1)?;
        ck.restore("q2", &mut agent.q2)?;
        ck.restore("q1_target", &mut agent.q1_target)?;
        ck.restore("q2_target", &mut agent.q2_target)?;
        ck.restore("log_eta", &mut agent.log_eta)?;
        agent.updates = get("updates").ok().and_then(|u| u.parse().ok()).unwrap_or(0);
        Ok(agent)
    }

    /// Checksum over every network parameter.
    pub fn checksum(&self) -> String {
        [&self.actor.params, &self.q1, &self.q2, &self.q1_target, &self.q2_target]
            .iter()
            .map(|p| p.checksum())
            .collect::<Vec<_>>()
            .join(":")
    }

    /// Draws a random index in `0..n` from the agent's own stream.
    pub fn gen_index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}
