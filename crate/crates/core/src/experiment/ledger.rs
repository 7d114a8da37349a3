//! JSON-lines metrics logs and the training-cost comparison between a
//! scratch run and a fine-tuned run.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{EpisodeLog, UpdateLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header { scenario_hash: String, agent: String, seed: u64 },
    Episode(EpisodeLog),
    Update(UpdateLog),
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("metrics log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("logs come from different scenarios ({0} vs {1})")]
    IncomparableLogs(String, String),
    #[error("metrics log has no episodes")]
    NoEpisodes,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub scenario_hash: String,
    pub agent: String,
    pub seed: u64,
    pub episodes: Vec<EpisodeLog>,
    pub updates: Vec<UpdateLog>,
}

impl MetricsLog {
    pub fn new(scenario_hash: impl Into<String>, agent: impl Into<String>, seed: u64) -> Self {
        Self { scenario_hash: scenario_hash.into(), agent: agent.into(), seed, ..Self::default() }
    }

    pub fn lines(&self) -> Vec<LogLine> {
        let mut out = vec![LogLine::Header { scenario_hash: self.scenario_hash.clone(), agent: self.agent.clone(), seed: self.seed }];
        out.extend(self.episodes.iter().cloned().map(LogLine::Episode));
        out.extend(self.updates.iter().cloned().map(LogLine::Update));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LedgerError> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for l in self.lines() {
            writeln!(f, "{}", serde_json::to_string(&l).expect("log line serialises"))?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let text = fs::read_to_string(path)?;
        let mut log = MetricsLog::default();
        for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: LogLine = serde_json::from_str(line).map_err(|e| LedgerError::Parse { line: k + 1, message: e.to_string() })?;
            match parsed {
                LogLine::Header { scenario_hash, agent, seed } => {
                    log.scenario_hash = scenario_hash;
                    log.agent = agent;
                    log.seed = seed;
                }
                LogLine::Episode(e) => log.episodes.push(e),
                LogLine::Update(u) => log.updates.push(u),
            }
        }
        Ok(log)
    }

    /// Plot data: `step,seed,reward` per episode.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,seed,reward\n");
        for e in &self.episodes {
            s.push_str(&format!("{},{},{:.4}\n", e.interactions, self.seed, e.reward));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    /// The fine-tuned run's mean reward over its first `window` episodes.
    pub threshold: f64,
    pub window: usize,
    /// Environment steps before each run first sustains the threshold.
    pub scratch_crossing: Option<u64>,
    pub finetune_crossing: Option<u64>,
    /// Compared horizon in episodes (the shorter log).
    pub episodes: usize,
    pub rebalancing_cost_saved: f64,
    pub lost_profit_saved: f64,
}

impl Savings {
    pub fn interactions_saved(&self) -> Option<i64> {
        Some(self.scratch_crossing? as i64 - self.finetune_crossing? as i64)
    }

    pub fn to_table(&self) -> String {
        let inter = match self.interactions_saved() {
            Some(v) => v.to_string(),
            None => "not reached".into(),
        };
        let head = ["Interactions", "Reb. Cost", "Unserved demand"];
        let vals = [inter, format!("{:.2}", self.rebalancing_cost_saved), format!("{:.2}", self.lost_profit_saved)];
        let w: Vec<usize> = head.iter().zip(&vals).map(|(h, v)| h.len().max(v.chars().count())).collect();
        let row = |cells: Vec<String>| cells.iter().zip(&w).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ");
        format!(
            "threshold {:.2} (first {} fine-tuning episodes), compared over {} episodes\n{}\n{}\n",
            self.threshold,
            self.window,
            self.episodes,
            row(head.iter().map(|s| s.to_string()).collect()).trim_end(),
            row(vals.to_vec()).trim_end()
        )
    }
}

/// Steps completed before the first episode `e` whose forward window
/// `e..e+window` averages at least `threshold`.
pub fn crossing_step(episodes: &[EpisodeLog], threshold: f64, window: usize) -> Option<u64> {
    let w = window.max(1);
    if episodes.len() < w {
        return None;
    }
    (0..=episodes.len() - w)
        .find(|&e| episodes[e..e + w].iter().map(|x| x.reward).sum::<f64>() / w as f64 >= threshold)
        .map(|e| if e == 0 { 0 } else { episodes[e - 1].interactions })
}

pub fn compute_savings(scratch: &MetricsLog, finetune: &MetricsLog, window: usize) -> Result<Savings, LedgerError> {
    if scratch.scenario_hash != finetune.scenario_hash {
        return Err(LedgerError::IncomparableLogs(scratch.scenario_hash.clone(), finetune.scenario_hash.clone()));
    }
    if scratch.episodes.is_empty() || finetune.episodes.is_empty() {
        return Err(LedgerError::NoEpisodes);
    }
    let w = window.max(1).min(finetune.episodes.len());
    let threshold = finetune.episodes[..w].iter().map(|e| e.reward).sum::<f64>() / w as f64;
    let horizon = scratch.episodes.len().min(finetune.episodes.len());
    let total = |log: &MetricsLog, f: fn(&EpisodeLog) -> f64| log.episodes[..horizon].iter().map(f).sum::<f64>();
    Ok(Savings {
        threshold,
        window: w,
        scratch_crossing: crossing_step(&scratch.episodes, threshold, w),
        finetune_crossing: crossing_step(&finetune.episodes, threshold, w),
        episodes: horizon,
        rebalancing_cost_saved: total(scratch, |e| e.rebalancing_cost) - total(finetune, |e| e.rebalancing_cost),
        lost_profit_saved: total(scratch, |e| e.lost_profit) - total(finetune, |e| e.lost_profit),
    })
}
