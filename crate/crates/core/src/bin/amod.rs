#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use amod_core::baselines::mpc_plan;
use amod_core::control::AgentPolicy;
use amod_core::dataset::{collect_dataset, coverage_stats, load_dataset, save_dataset, BehaviorLabel};
use amod_core::env::{AmodEnv, EnvConfig};
use amod_core::experiment::{
    baseline_controller, cmd_eval, cmd_ledger, cmd_train, cmd_transfer, AgentKind, ExperimentConfig, ExperimentError,
};
use amod_core::agents::{ActionMode, SacAgent};
use amod_core::nn::Checkpoint;
use amod_core::scenario::{load_scenario, make_synthetic_scenario, save_scenario, SyntheticSpec};

#[derive(Parser)]
#[command(name = "amod", version, about = "Fleet rebalancing experiments")]
struct Cli {
    /// Single seed; overrides the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long, value_parser = parse_agent)]
    agent: Option<AgentKind>,
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Online, offline or fine-tuning training.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint to start from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        online_episodes: Option<usize>,
        #[arg(long)]
        checkpoint_interval: Option<usize>,
    },
    /// Evaluate an agent or baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Zero-shot evaluation of a checkpoint on another scenario.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Savings of a fine-tuned run over a scratch run.
    Ledger {
        scratch: PathBuf,
        finetune: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    #[command(subcommand)]
    Debug(DebugCommand),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Roll a behaviour policy and write a dataset.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Behaviour checkpoint for learned agents.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        size: usize,
        #[arg(long, default_value = "M")]
        label: BehaviorLabel,
        output: PathBuf,
    },
    /// Print coverage statistics.
    Stats {
        path: PathBuf,
        /// Expert mean episode reward for the relative score.
        #[arg(long)]
        expert: Option<f64>,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Generate a synthetic scenario.
    Make {
        /// Synthetic spec (JSON); defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        output: PathBuf,
    },
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
enum DebugCommand {
    /// Dump the oracle MPC plan at the first step as JSON.
    MpcPlan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
    },
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse().map_err(|e: ExperimentError| e.to_string())
}

fn config_error(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

fn base_config(cli: &Cli, common: Option<&Common>) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(c) = common {
        if let Some(a) = c.agent {
            cfg.agent = a;
        }
        if let Some(s) = &c.scenario {
            cfg.scenario = Some(s.clone());
        }
    }
    Ok(cfg)
}

fn emit_report(cfg: &ExperimentConfig, name: &str, table: &str, csv: &str) -> Result<(), ExperimentError> {
    print!("{table}");
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(format!("{name}.txt")), table)?;
    fs::write(cfg.out.join(format!("{name}.csv")), csv)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Train { common, episodes, steps, dataset, resume, online_episodes, checkpoint_interval } => {
            let mut cfg = base_config(&cli, Some(common))?;
            if let Some(e) = episodes {
                cfg.episodes = *e;
            }
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            if dataset.is_some() {
                cfg.dataset = dataset.clone();
            }
            if resume.is_some() {
                cfg.checkpoint = resume.clone();
            }
            if let Some(e) = online_episodes {
                cfg.online_episodes = *e;
            }
            if checkpoint_interval.is_some() {
                cfg.checkpoint_interval = *checkpoint_interval;
            }
            for &seed in &cfg.seeds {
                let out = cmd_train(&cfg, seed)?;
                println!("seed {seed}: checkpoint {} metrics {}", out.checkpoint.display(), out.metrics.display());
                for (label, p) in [("M", &out.medium), ("H", &out.high)] {
                    if let Some(p) = p {
                        println!("seed {seed}: {label} snapshot {}", p.display());
                    }
                }
            }
        }
        Command::Eval { common, checkpoint, episodes } => {
            let mut cfg = base_config(&cli, Some(common))?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            if let Some(e) = episodes {
                cfg.eval_episodes = *e;
            }
            let report = cmd_eval(&cfg)?;
            emit_report(&cfg, &format!("eval-{}", cfg.agent), &report.to_table(), &report.to_csv())?;
        }
        Command::Transfer { checkpoint, scenario, episodes } => {
            let mut cfg = base_config(&cli, None)?;
            if let Some(e) = episodes {
                cfg.eval_episodes = *e;
            }
            let target = Arc::new(load_scenario(scenario)?);
            let report = cmd_transfer(checkpoint, &target, &cfg.seeds, cfg.eval_episodes, cfg.forecast_sigma)?;
            emit_report(&cfg, &format!("transfer-{}", target.name()), &report.to_table(), &report.to_csv())?;
        }
        Command::Ledger { scratch, finetune, window } => {
            let cfg = base_config(&cli, None)?;
            let savings = cmd_ledger(scratch, finetune, *window)?;
            let table = savings.to_table();
            let csv = format!(
                "interactions,reb_cost,unserved_demand\n{},{},{}\n",
                savings.interactions_saved().map_or(String::new(), |v| v.to_string()),
                savings.rebalancing_cost_saved,
                savings.lost_profit_saved
            );
            emit_report(&cfg, "ledger", &table, &csv)?;
        }
        Command::Dataset(DatasetCommand::Collect { common, checkpoint, size, label, output }) => {
            let cfg = base_config(&cli, Some(common))?;
            let sc = cfg.scenario()?;
            let seed = cfg.seeds[0];
            let mut env = AmodEnv::new(sc.clone(), EnvConfig { forecast_sigma: cfg.forecast_sigma, ..EnvConfig::default() });
            let ds = if cfg.agent.is_learned() {
                let ck = checkpoint.as_ref().ok_or(ExperimentError::CheckpointMissing(cfg.agent))?;
                let mut agent = SacAgent::from_checkpoint(&Checkpoint::load(ck)?, seed)?;
                let mut policy = AgentPolicy { agent: &mut agent, mode: ActionMode::Sample };
                collect_dataset(&mut policy, &mut env, *size, seed, label.clone(), cfg.train.reward_scale)?
            } else {
                let mut c = baseline_controller(cfg.agent, seed, cfg.forecast_sigma).expect("baseline kind");
                collect_dataset(c.as_mut(), &mut env, *size, seed, label.clone(), cfg.train.reward_scale)?
            };
            save_dataset(&ds, output)?;
            println!("{} transitions, behaviour mean reward {:.2}", ds.len(), ds.meta.behavior_mean_reward);
        }
        Command::Dataset(DatasetCommand::Stats { path, expert }) => {
            let ds = load_dataset(path)?;
            let cov = coverage_stats(&ds, *expert)?;
            println!("{:<10} {:>8} {:>8} {:>8}", "dataset", "score", "spread", "iqr");
            let score = cov.relative_reward.map_or("-".to_string(), |r| format!("{r:.2}"));
            println!("{:<10} {:>8} {:>8.2} {:>8.2}", ds.meta.label, score, cov.spread, cov.iqr);
        }
        Command::Scenario(ScenarioCommand::Make { spec, preset, output }) => {
            let spec = match (spec, preset) {
                (Some(p), _) => serde_json::from_str::<SyntheticSpec>(&fs::read_to_string(p)?).map_err(config_error)?,
                (None, Some(city)) => SyntheticSpec::city_preset(city).ok_or_else(|| config_error(format!("unknown preset `{city}`")))?,
                (None, None) => SyntheticSpec::default(),
            };
            let sc = make_synthetic_scenario(&spec, cli.seed.unwrap_or(0))?;
            save_scenario(&sc, output)?;
            println!("{} stations, fleet {}, hash {}", sc.n_stations(), sc.fleet_size(), sc.content_hash());
        }
        Command::Scenario(ScenarioCommand::Validate { path }) => {
            let sc = load_scenario(path)?;
            println!("ok: {} stations, T={}, K={}, hash {}", sc.n_stations(), sc.episode_len(), sc.plan_horizon(), sc.content_hash());
        }
        Command::Debug(DebugCommand::MpcPlan { scenario, horizon }) => {
            let sc = Arc::new(load_scenario(scenario)?);
            let mut env = AmodEnv::new(sc.clone(), EnvConfig::default());
            env.reset(cli.seed.unwrap_or(0));
            let h = horizon.unwrap_or(sc.plan_horizon()).min(sc.episode_len());
            let demand: Vec<Vec<u32>> = (1..=h).map(|s| env.realized_demand(s).to_vec()).collect();
            let plan = mpc_plan(env.state(), &sc, h, &demand).map_err(|e| ExperimentError::Config(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&plan).expect("plan serialises"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
