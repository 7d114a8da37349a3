//! Offline datasets: collection with a behaviour controller, a checksummed
//! JSON-lines format, and action-coverage statistics.
//!
//! File layout: the first line is a [`DatasetHeader`]; each following line is
//! one [`DatasetRecord`]. The header's `sha256` covers every record line
//! including its trailing newline.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{compute_reference_values, Transition};
use crate::control::{episode_seed, run_episode, Controller};
use crate::env::{AmodEnv, EnvError};
use crate::nn::Matrix;

pub const FORMAT_NAME: &str = "amod-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("dataset checksum mismatch: header says {expected}, content hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("episode records are not contiguous at record {0}")]
    BrokenEpisode(usize),
    #[error("behaviour policy failed: {0}")]
    PolicyFailure(#[from] EnvError),
}

/// Quality grade of the behaviour policy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BehaviorLabel {
    /// Roughly 75% of the expert score.
    M,
    /// Roughly 90% of the expert score.
    H,
    /// Greedy heuristic.
    G,
    /// Expert.
    E,
    Custom(String),
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorLabel::M => f.write_str("M"),
            BehaviorLabel::H => f.write_str("H"),
            BehaviorLabel::G => f.write_str("G"),
            BehaviorLabel::E => f.write_str("E"),
            BehaviorLabel::Custom(s) => f.write_str(s),
        }
    }
}

impl std::str::FromStr for BehaviorLabel {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "M" | "m" => BehaviorLabel::M,
            "H" | "h" => BehaviorLabel::H,
            "G" | "g" => BehaviorLabel::G,
            "E" | "e" => BehaviorLabel::E,
            other => BehaviorLabel::Custom(other.to_string()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenario_hash: String,
    pub label: BehaviorLabel,
    pub seed: u64,
    pub n_stations: usize,
    pub n_features: usize,
    pub episode_len: usize,
    /// Scale applied when records become training transitions.
    pub reward_scale: f64,
    /// Mean undiscounted episode reward of the behaviour policy (currency).
    pub behavior_mean_reward: f64,
}

/// One step. `reward` is the unscaled environment reward in currency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub episode_id: u64,
    pub step_id: usize,
    pub obs: Matrix,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Matrix,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub size: usize,
    pub sha256: String,
    pub meta: DatasetMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks that every episode runs `0..T` with `done` only on its last step.
    pub fn check_contiguity(&self) -> Result<(), DatasetError> {
        let t = self.meta.episode_len;
        for (k, r) in self.records.iter().enumerate() {
            let expect_step = if k == 0 || self.records[k - 1].done { 0 } else { self.records[k - 1].step_id + 1 };
            let same_episode = k == 0 || self.records[k - 1].done || self.records[k - 1].episode_id == r.episode_id;
            if r.step_id != expect_step || !same_episode || r.done != (r.step_id + 1 == t) {
                return Err(DatasetError::BrokenEpisode(k));
            }
        }
        match self.records.last() {
            Some(r) if !r.done => Err(DatasetError::BrokenEpisode(self.records.len() - 1)),
            _ => Ok(()),
        }
    }

    /// Fills `mc_return` with the discounted behaviour return in scaled units.
    pub fn attach_reference_values(&mut self, gamma: f64) -> Result<(), DatasetError> {
        self.check_contiguity()?;
        let scale = self.meta.reward_scale;
        let rewards: Vec<f64> = self.records.iter().map(|r| r.reward * scale).collect();
        let dones: Vec<bool> = self.records.iter().map(|r| r.done).collect();
        let v = compute_reference_values(&rewards, &dones, gamma).map_err(|e| DatasetError::BrokenEpisode(e.index))?;
        for (r, v) in self.records.iter_mut().zip(v) {
            r.mc_return = Some(v);
        }
        Ok(())
    }

    /// Training transitions with rewards scaled by the dataset's scale.
    pub fn transitions(&self) -> Vec<Transition> {
        self.records
            .iter()
            .map(|r| Transition {
                obs: r.obs.clone(),
                action: r.action.clone(),
                reward: r.reward * self.meta.reward_scale,
                next_obs: r.next_obs.clone(),
                done: r.done,
                mc_return: r.mc_return,
            })
            .collect()
    }

    /// Appends another shard; its episode ids are offset past ours.
    pub fn extend_shard(&mut self, other: &OfflineDataset) {
        let offset = self.records.iter().map(|r| r.episode_id + 1).max().unwrap_or(0);
        self.records.extend(other.records.iter().cloned().map(|mut r| {
            r.episode_id += offset;
            r
        }));
    }
}

/// Rolls complete episodes of `controller` until at least `n_transitions`
/// steps are recorded (episode `k` uses [`episode_seed`]`(seed, k)`).
pub fn collect_dataset(
    controller: &mut dyn Controller,
    env: &mut AmodEnv,
    n_transitions: usize,
    seed: u64,
    label: BehaviorLabel,
    reward_scale: f64,
) -> Result<OfflineDataset, DatasetError> {
    let sc = env.scenario().clone();
    let t = sc.episode_len();
    let mut records = Vec::with_capacity(n_transitions);
    let mut episode_rewards = Vec::new();
    let mut k = 0u64;
    while records.len() < n_transitions {
        let mut step = 0;
        let summary = run_episode(env, controller, episode_seed(seed, k), |obs, action, r| {
            records.push(DatasetRecord {
                episode_id: k,
                step_id: step,
                obs: obs.features.clone(),
                action: action.to_vec(),
                reward: r.reward(),
                next_obs: r.next_obs.features.clone(),
                done: r.done,
                mc_return: None,
            });
            step += 1;
        })?;
        episode_rewards.push(summary.reward());
        k += 1;
    }
    let n_features = records.first().map_or(0, |r| r.obs.cols());
    let meta = DatasetMeta {
        scenario_hash: sc.content_hash(),
        label,
        seed,
        n_stations: sc.n_stations(),
        n_features,
        episode_len: t,
        reward_scale,
        behavior_mean_reward: mean(&episode_rewards),
    };
    Ok(OfflineDataset { meta, records })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn record_lines(records: &[DatasetRecord]) -> (Vec<String>, String) {
    let mut h = Sha256::new();
    let lines: Vec<String> = records
        .iter()
        .map(|r| {
            let line = serde_json::to_string(r).expect("records serialise");
            h.update(line.as_bytes());
            h.update(b"\n");
            line
        })
        .collect();
    (lines, hex::encode(h.finalize()))
}

pub fn save_dataset(dataset: &OfflineDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let (lines, sha256) = record_lines(&dataset.records);
    let header = DatasetHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        size: dataset.records.len(),
        sha256,
        meta: dataset.meta.clone(),
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serialises"))?;
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<OfflineDataset, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or(DatasetError::Parse { line: 1, message: "missing header".into() })??;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| DatasetError::Parse { line: 1, message: e.to_string() })?;
    if header.format != FORMAT_NAME {
        return Err(DatasetError::Parse { line: 1, message: format!("unknown format `{}`", header.format) });
    }
    if header.version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch { found: header.version, expected: FORMAT_VERSION });
    }
    let mut h = Sha256::new();
    let mut raw = Vec::with_capacity(header.size);
    for line in lines {
        let line = line?;
        h.update(line.as_bytes());
        h.update(b"\n");
        raw.push(line);
    }
    let actual = hex::encode(h.finalize());
    if actual != header.sha256 || raw.len() != header.size {
        return Err(DatasetError::ChecksumMismatch { expected: header.sha256, actual });
    }
    let records = raw
        .iter()
        .enumerate()
        .map(|(k, l)| serde_json::from_str(l).map_err(|e| DatasetError::Parse { line: k + 2, message: e.to_string() }))
        .collect::<Result<Vec<DatasetRecord>, _>>()?;
    Ok(OfflineDataset { meta: header.meta, records })
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Behaviour mean episode reward over the expert's, when an expert score is given.
    pub relative_reward: Option<f64>,
    /// Mean over stations of `max − min` of the action component.
    pub spread: f64,
    /// Mean over stations of the 0.99 minus the 0.01 quantile.
    pub iqr: f64,
}

pub fn coverage_stats(dataset: &OfflineDataset, expert_score: Option<f64>) -> Result<Coverage, DatasetError> {
    let first = dataset.records.first().ok_or(DatasetError::EmptyDataset)?;
    let n = first.action.len();
    let mut spread = 0.0;
    let mut iqr = 0.0;
    for i in 0..n {
        let mut col: Vec<f64> = dataset.records.iter().map(|r| r.action[i]).collect();
        col.sort_by(f64::total_cmp);
        spread += col[col.len() - 1] - col[0];
        iqr += quantile_sorted(&col, 0.99) - quantile_sorted(&col, 0.01);
    }
    Ok(Coverage {
        relative_reward: expert_score.map(|e| dataset.meta.behavior_mean_reward / e),
        spread: spread / n as f64,
        iqr: iqr / n as f64,
    })
}

/// Picks the snapshot whose evaluated score best matches `fraction` of the
/// expert score: the first one within `tolerance` (relative to the expert),
/// otherwise the closest.
pub fn select_snapshot(scores: &[(usize, f64)], expert_score: f64, fraction: f64, tolerance: f64) -> Option<usize> {
    let target = fraction * expert_score;
    let band = tolerance * expert_score.abs();
    scores
        .iter()
        .find(|(_, s)| (s - target).abs() <= band)
        .or_else(|| scores.iter().min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs())))
        .map(|&(id, _)| id)
}
