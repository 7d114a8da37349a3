//! Learned controllers: Dirichlet GNN actor, twin GNN critics, and the SAC,
//! CQL, and Cal-CQL update rules.

pub mod buffer;
pub mod nets;
pub mod sac;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use nets::{ActorNet, CriticArch, CriticVariant, NetError, CONCENTRATION_FLOOR};
pub use sac::{ActionMode, ActorGradient, AgentError, CriticStats, Losses, Regularizer, SacAgent, TrainConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("episode records are not contiguous at index {index}")]
pub struct BrokenEpisode {
    pub index: usize,
}

/// Discounted return to episode end for each step of consecutive episodes.
///
/// `rewards[k]` belongs to step `k`; `dones[k]` marks the last step of an
/// episode. The final record must close its episode.
pub fn compute_reference_values(rewards: &[f64], dones: &[bool], gamma: f64) -> Result<Vec<f64>, BrokenEpisode> {
    assert_eq!(rewards.len(), dones.len(), "rewards and dones differ in length");
    if let Some(false) = dones.last() {
        return Err(BrokenEpisode { index: dones.len() - 1 });
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        if dones[k] {
            acc = 0.0;
        }
        acc = rewards[k] + gamma * acc;
        out[k] = acc;
    }
    Ok(out)
}
