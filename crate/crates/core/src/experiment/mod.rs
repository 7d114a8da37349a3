//! Experiment orchestration behind the command-line tool: training, offline
//! training, fine-tuning, evaluation, zero-shot transfer, and cost ledgers.

pub mod eval;
pub mod ledger;
pub mod train;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{ActionMode, AgentError, Regularizer, SacAgent, TrainConfig};
use crate::baselines::{EqualDistributionController, GreedyController, MpcController, MpcMode, RandomController};
use crate::control::{AgentPolicy, Controller};
use crate::dataset::{load_dataset, select_snapshot, DatasetError};
use crate::env::{feature_width, EnvConfig, EnvError};
use crate::nn::{Checkpoint, NnError};
use crate::scenario::{load_scenario, make_synthetic_scenario, Scenario, ScenarioError, SyntheticSpec};

use eval::{evaluate, EvalResult, ReportRow, ResultReport};
use ledger::{LedgerError, MetricsLog};
use train::{new_agent, train_offline, train_online, OnlineOptions, TrainError};

pub const DEFAULT_SEEDS: [u64; 3] = [5, 10, 42];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    #[default]
    Sac,
    Cql,
    Calql,
    Random,
    Ed,
    Greedy,
    MpcOracle,
    MpcForecast,
    None,
}

impl AgentKind {
    pub const ALL: [AgentKind; 9] = [
        AgentKind::Sac,
        AgentKind::Cql,
        AgentKind::Calql,
        AgentKind::Random,
        AgentKind::Ed,
        AgentKind::Greedy,
        AgentKind::MpcOracle,
        AgentKind::MpcForecast,
        AgentKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Sac => "sac",
            AgentKind::Cql => "cql",
            AgentKind::Calql => "calql",
            AgentKind::Random => "random",
            AgentKind::Ed => "ed",
            AgentKind::Greedy => "greedy",
            AgentKind::MpcOracle => "mpc-oracle",
            AgentKind::MpcForecast => "mpc-forecast",
            AgentKind::None => "none",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, AgentKind::Sac | AgentKind::Cql | AgentKind::Calql)
    }

    pub fn regularizer(self) -> Regularizer {
        match self {
            AgentKind::Cql => Regularizer::Conservative,
            AgentKind::Calql => Regularizer::Calibrated,
            _ => Regularizer::None,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| ExperimentError::Config(format!("unknown agent `{s}`")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset required for agent {0}")]
    DatasetMissing(AgentKind),
    #[error("checkpoint required for agent {0}")]
    CheckpointMissing(AgentKind),
    #[error("checkpoint expects {expected} node features, target scenario provides {found}")]
    FeatureWidthMismatch { expected: usize, found: usize },
    #[error("checkpoint parameters changed during evaluation")]
    ParametersMutated,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// 2 for configuration problems, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::DatasetMissing(_)
            | ExperimentError::CheckpointMissing(_)
            | ExperimentError::FeatureWidthMismatch { .. }
            | ExperimentError::Scenario(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario JSON file; takes precedence over `synthetic`.
    pub scenario: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub synthetic_seed: u64,
    pub agent: AgentKind,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub out: PathBuf,
    /// Online training episodes.
    pub episodes: usize,
    /// Offline gradient steps.
    pub steps: u64,
    pub dataset: Option<PathBuf>,
    /// Checkpoint to evaluate, transfer, or fine-tune from.
    pub checkpoint: Option<PathBuf>,
    /// Online fine-tuning episodes after loading `checkpoint`.
    pub online_episodes: usize,
    pub forecast_sigma: f64,
    /// Validate a snapshot every this many online episodes; the best one
    /// becomes the run's checkpoint.
    pub checkpoint_interval: Option<usize>,
    pub log_every: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            synthetic: None,
            synthetic_seed: 0,
            agent: AgentKind::Sac,
            train: TrainConfig::default(),
            seeds: DEFAULT_SEEDS.to_vec(),
            eval_episodes: 10,
            out: PathBuf::from("out"),
            episodes: 1000,
            steps: 5000,
            dataset: None,
            checkpoint: None,
            online_episodes: 0,
            forecast_sigma: EnvConfig::default().forecast_sigma,
            checkpoint_interval: None,
            log_every: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn scenario(&self) -> Result<Arc<Scenario>, ExperimentError> {
        match (&self.scenario, &self.synthetic) {
            (Some(p), _) => Ok(Arc::new(load_scenario(p)?)),
            (None, Some(spec)) => Ok(Arc::new(make_synthetic_scenario(spec, self.synthetic_seed)?)),
            (None, None) => Err(ExperimentError::Config("no scenario or synthetic spec given".into())),
        }
    }

    pub fn validate_for_training(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("seed list is empty".into()));
        }
        if !(self.train.gamma > 0.0 && self.train.gamma <= 1.0) {
            return Err(ExperimentError::Config(format!("gamma {} outside (0, 1]", self.train.gamma)));
        }
        if self.train.batch_size == 0 || self.train.batch_size > self.train.buffer_size {
            return Err(ExperimentError::Config("batch size must be in 1..=buffer_size".into()));
        }
        match self.agent {
            AgentKind::Cql | AgentKind::Calql if self.dataset.is_none() => Err(ExperimentError::DatasetMissing(self.agent)),
            k if !k.is_learned() => Err(ExperimentError::Config(format!("agent {k} is not trainable"))),
            _ => Ok(()),
        }
    }

    fn stem(&self, seed: u64) -> String {
        format!("{}-seed{seed}", self.agent)
    }

    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.out.join(format!("{}.ckpt.json", self.stem(seed)))
    }

    pub fn metrics_path(&self, seed: u64) -> PathBuf {
        self.out.join(format!("{}.metrics.jsonl", self.stem(seed)))
    }
}

/// Controller for a non-learned agent kind.
pub fn baseline_controller(kind: AgentKind, seed: u64, sigma: f64) -> Option<Box<dyn Controller>> {
    Some(match kind {
        AgentKind::Random => Box::new(RandomController::new(seed)),
        AgentKind::Ed | AgentKind::None => Box::new(EqualDistributionController),
        AgentKind::Greedy => Box::new(GreedyController::new(sigma, seed)),
        AgentKind::MpcOracle => Box::new(MpcController::new(MpcMode::Oracle, sigma, seed)),
        AgentKind::MpcForecast => Box::new(MpcController::new(MpcMode::Forecast, sigma, seed)),
        _ => return None,
    })
}

/// What one training run produced.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub log: MetricsLog,
    /// Snapshot checkpoints near 75% and 90% of the final evaluated score.
    pub medium: Option<PathBuf>,
    pub high: Option<PathBuf>,
}

fn load_agent(path: &Path, seed: u64) -> Result<SacAgent, ExperimentError> {
    Ok(SacAgent::from_checkpoint(&Checkpoint::load(path)?, seed)?)
}

/// Runs the configured trainer for one seed and writes checkpoint and metrics.
pub fn cmd_train(config: &ExperimentConfig, seed: u64) -> Result<TrainOutput, ExperimentError> {
    config.validate_for_training()?;
    let sc = config.scenario()?;
    fs::create_dir_all(&config.out)?;
    let mut log = MetricsLog::new(sc.content_hash(), config.agent.name(), seed);
    let mut medium = None;
    let mut high = None;
    let agent = match config.agent {
        AgentKind::Sac => {
            let agent = match &config.checkpoint {
                Some(p) => load_agent(p, seed)?,
                None => new_agent(config.train.clone(), &sc, seed),
            };
            let opts = OnlineOptions {
                forecast_sigma: config.forecast_sigma,
                snapshot_every: config.checkpoint_interval,
                ..OnlineOptions::new(config.episodes, seed)
            };
            let run = train_online(sc.clone(), agent, &opts, None, |_| {})?;
            log.episodes = run.log;
            if let Some(expert) = run.snapshots.iter().map(|s| s.score).reduce(f64::max) {
                let scores: Vec<(usize, f64)> = run.snapshots.iter().enumerate().map(|(k, s)| (k, s.behavior_score)).collect();
                for (fraction, label, slot) in [(0.75, "M", &mut medium), (0.9, "H", &mut high)] {
                    if let Some(k) = select_snapshot(&scores, expert, fraction, 0.03) {
                        let p = config.out.join(format!("{}-{label}.ckpt.json", config.stem(seed)));
                        run.snapshots[k].checkpoint.save(&p)?;
                        *slot = Some(p);
                    }
                }
                let index: Vec<(usize, f64, f64)> = run.snapshots.iter().map(|s| (s.episode, s.score, s.behavior_score)).collect();
                fs::write(config.out.join(format!("{}.snapshots.json", config.stem(seed))), serde_json::to_string_pretty(&index).expect("scores"))?;
            }
            match run.snapshots.iter().max_by(|a, b| a.score.total_cmp(&b.score)) {
                Some(best) => {
                    run.agent.to_checkpoint().save(config.out.join(format!("{}-last.ckpt.json", config.stem(seed))))?;
                    SacAgent::from_checkpoint(&best.checkpoint, seed)?
                }
                None => run.agent,
            }
        }
        kind => {
            let path = config.dataset.as_ref().ok_or(ExperimentError::DatasetMissing(kind))?;
            let mut data = load_dataset(path)?;
            data.meta.reward_scale = config.train.reward_scale;
            if kind == AgentKind::Calql {
                data.attach_reference_values(config.train.gamma)?;
            }
            let transitions = data.transitions();
            if let (Some(ck), true) = (&config.checkpoint, config.online_episodes > 0) {
                let mut agent = load_agent(ck, seed)?;
                agent.set_learning_rates(config.train.actor_lr, config.train.critic_lr);
                let opts = OnlineOptions { forecast_sigma: config.forecast_sigma, regularizer: kind.regularizer(), ..OnlineOptions::new(config.online_episodes, seed) };
                let run = train_online(sc.clone(), agent, &opts, Some(&transitions), |_| {})?;
                log.episodes = run.log;
                run.agent
            } else {
                let mut agent = match &config.checkpoint {
                    Some(p) => load_agent(p, seed)?,
                    None => new_agent(config.train.clone(), &sc, seed),
                };
                log.updates = train_offline(&mut agent, &transitions, config.steps, kind.regularizer(), seed, config.log_every, |_| {})?;
                agent
            }
        }
    };
    let checkpoint = config.checkpoint_path(seed);
    agent.to_checkpoint().save(&checkpoint)?;
    let metrics = config.metrics_path(seed);
    log.save(&metrics)?;
    fs::write(config.out.join(format!("{}.curve.csv", config.stem(seed))), log.curve_csv())?;
    Ok(TrainOutput { seed, checkpoint, metrics, log, medium, high })
}

fn eval_checkpoint(path: &Path, scenario: &Arc<Scenario>, seeds: &[u64], episodes: usize, sigma: f64) -> Result<EvalResult, ExperimentError> {
    let mut agent = load_agent(path, 0)?;
    let expected = agent.n_features();
    let found = feature_width(scenario.plan_horizon());
    if expected != found {
        return Err(ExperimentError::FeatureWidthMismatch { expected, found });
    }
    let before = agent.checksum();
    let mut policy = AgentPolicy { agent: &mut agent, mode: ActionMode::Mean };
    let res = evaluate(scenario, &mut policy, seeds, episodes, sigma)?;
    if agent.checksum() != before {
        return Err(ExperimentError::ParametersMutated);
    }
    Ok(res)
}

/// Evaluates the configured agent over `seeds × eval_episodes`.
pub fn cmd_eval(config: &ExperimentConfig) -> Result<ResultReport, ExperimentError> {
    let sc = config.scenario()?;
    let res = if config.agent.is_learned() {
        let ck = config.checkpoint.as_ref().ok_or(ExperimentError::CheckpointMissing(config.agent))?;
        eval_checkpoint(ck, &sc, &config.seeds, config.eval_episodes, config.forecast_sigma)?
    } else {
        let mut all = EvalResult::default();
        for &s in &config.seeds {
            let mut c = baseline_controller(config.agent, s, config.forecast_sigma).expect("baseline kind");
            all.episodes.extend(evaluate(&sc, c.as_mut(), &[s], config.eval_episodes, config.forecast_sigma)?.episodes);
        }
        all
    };
    Ok(ResultReport { scenario: sc.name().to_string(), rows: vec![ReportRow::from_eval(config.agent.name(), &res)] })
}

/// Zero-shot evaluation of a checkpoint on another scenario.
pub fn cmd_transfer(checkpoint: &Path, target: &Arc<Scenario>, seeds: &[u64], episodes: usize, sigma: f64) -> Result<ResultReport, ExperimentError> {
    let res = eval_checkpoint(checkpoint, target, seeds, episodes, sigma)?;
    Ok(ResultReport { scenario: target.name().to_string(), rows: vec![ReportRow::from_eval("transfer", &res)] })
}

pub fn cmd_ledger(scratch: &Path, finetune: &Path, window: usize) -> Result<ledger::Savings, ExperimentError> {
    Ok(ledger::compute_savings(&MetricsLog::load(scratch)?, &MetricsLog::load(finetune)?, window)?)
}
