//! Evaluation runs, summary statistics, bootstrap intervals, and report tables.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{episode_seed, run_episode, Controller, EpisodeSummary};
use crate::env::{AmodEnv, EnvConfig, EnvError};
use crate::scenario::{from_cents, Cents, Scenario};

/// Evaluation episodes never share demand draws with training episodes.
const EVAL_SEED_OFFSET: u64 = 1 << 40;

pub fn eval_episode_seed(seed: u64, k: u64) -> u64 {
    episode_seed(seed.wrapping_add(EVAL_SEED_OFFSET), k)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Episode summaries, seed-major.
    pub episodes: Vec<EpisodeSummary>,
}

impl EvalResult {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.reward()).collect()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.rewards())
    }

    pub fn std(&self) -> f64 {
        std_dev(&self.rewards())
    }

    pub fn ledger(&self) -> CostLedger {
        let mut l = CostLedger::default();
        for e in &self.episodes {
            l.add(e.steps as u64, e.rebalancing_cost_cents, e.lost_profit_cents);
        }
        l
    }
}

/// Runs `episodes` evaluation episodes for each seed.
pub fn evaluate(scenario: &Arc<Scenario>, controller: &mut dyn Controller, seeds: &[u64], episodes: usize, sigma: f64) -> Result<EvalResult, EnvError> {
    let mut env = AmodEnv::new(scenario.clone(), EnvConfig { forecast_sigma: sigma });
    let mut out = EvalResult::default();
    for &s in seeds {
        for k in 0..episodes {
            out.episodes.push(run_episode(&mut env, controller, eval_episode_seed(s, k as u64), |_, _, _| {})?);
        }
    }
    Ok(out)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Lower end of the one-sided `confidence` bootstrap interval for
/// `mean(a) − mean(b)`. Equal-length samples are treated as paired (same
/// episode seeds); otherwise each sample is resampled independently.
pub fn bootstrap_diff_lower(a: &[f64], b: &[f64], confidence: f64, resamples: usize, seed: u64) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "bootstrap needs data");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            if a.len() == b.len() {
                let mut s = 0.0;
                for _ in 0..a.len() {
                    let k = rng.gen_range(0..a.len());
                    s += a[k] - b[k];
                }
                s / a.len() as f64
            } else {
                let ma = (0..a.len()).map(|_| a[rng.gen_range(0..a.len())]).sum::<f64>() / a.len() as f64;
                let mb = (0..b.len()).map(|_| b[rng.gen_range(0..b.len())]).sum::<f64>() / b.len() as f64;
                ma - mb
            }
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    crate::dataset::quantile_sorted(&stats, 1.0 - confidence)
}

/// Environment interactions and the money they cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub interactions: u64,
    pub rebalancing_cost_cents: Cents,
    pub lost_profit_cents: Cents,
}

impl CostLedger {
    pub fn add(&mut self, steps: u64, rebalancing: Cents, lost: Cents) {
        self.interactions += steps;
        self.rebalancing_cost_cents += rebalancing;
        self.lost_profit_cents += lost;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub agent: String,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
    pub served_fraction: f64,
    pub ledger: CostLedger,
}

impl ReportRow {
    pub fn from_eval(agent: impl Into<String>, res: &EvalResult) -> Self {
        let demand: u64 = res.episodes.iter().map(|e| e.demand).sum();
        let served: u64 = res.episodes.iter().map(|e| e.served).sum();
        Self {
            agent: agent.into(),
            mean: res.mean(),
            std: res.std(),
            episodes: res.episodes.len(),
            served_fraction: if demand == 0 { 0.0 } else { served as f64 / demand as f64 },
            ledger: res.ledger(),
        }
    }
}

/// `"53.1(±1.1)"`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.1}(±{std:.1})")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub scenario: String,
    pub rows: Vec<ReportRow>,
}

impl ResultReport {
    pub fn to_table(&self) -> String {
        let mut cells: Vec<[String; 6]> = vec![[
            "Agent".into(),
            "Reward".into(),
            "Served".into(),
            "Interactions".into(),
            "Reb. Cost".into(),
            "Unserved demand".into(),
        ]];
        for r in &self.rows {
            cells.push([
                r.agent.clone(),
                format_mean_std(r.mean, r.std),
                format!("{:.3}", r.served_fraction),
                r.ledger.interactions.to_string(),
                format!("{:.2}", from_cents(r.ledger.rebalancing_cost_cents)),
                format!("{:.2}", from_cents(r.ledger.lost_profit_cents)),
            ]);
        }
        let widths: Vec<usize> = (0..6).map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        if !self.scenario.is_empty() {
            let _ = writeln!(out, "scenario: {}", self.scenario);
        }
        for row in &cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["agent", "mean", "std", "episodes", "served_fraction", "interactions", "rebalancing_cost", "unserved_lost_profit"])
            .expect("in-memory csv");
        for r in &self.rows {
            w.write_record([
                r.agent.clone(),
                format!("{:.4}", r.mean),
                format!("{:.4}", r.std),
                r.episodes.to_string(),
                format!("{:.4}", r.served_fraction),
                r.ledger.interactions.to_string(),
                format!("{:.2}", from_cents(r.ledger.rebalancing_cost_cents)),
                format!("{:.2}", from_cents(r.ledger.lost_profit_cents)),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}
