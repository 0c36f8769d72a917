//! The heuristic network: policy, win/draw/loss and moves-left heads over an
//! SE-residual convolutional trunk, with tapped hidden states.
//!
//! The shipped network is a deterministic, seeded stand-in. Its weights are random
//! apart from two "material" trunk channels that carry per-square piece values
//! through every block into the value heads, so that value-guided play is
//! meaningfully better than random play.

mod network;
mod weights;

pub use network::{Agent, AgentOutput, Heads, HiddenState};
pub use weights::{AgentConfig, Conv3x3, Dense, NetworkWeights, SeBlock};

use crate::chess::{move_to_policy_index, Color, Move};
use crate::error::{Error, Result};

/// Rewards for (win, draw, loss) used to turn a WDL distribution into a value.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardVector(pub [f32; 3]);

impl Default for RewardVector {
    fn default() -> Self {
        RewardVector([1.0, 0.0, -1.0])
    }
}

impl RewardVector {
    pub fn new(win: f32, draw: f32, loss: f32) -> Result<RewardVector> {
        if ![win, draw, loss].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("reward vector must be finite".into()));
        }
        Ok(RewardVector([win, draw, loss]))
    }
}

/// `wdl . R`, negated when the WDL was computed for the opponent.
pub fn value_from_wdl(wdl: [f32; 3], reward: RewardVector, perspective_flip: bool) -> f32 {
    let v: f32 = wdl.iter().zip(reward.0.iter()).map(|(p, r)| p * r).sum();
    if perspective_flip {
        -v
    } else {
        v
    }
}

/// Softmax over the policy logits of the legal moves only, aligned with `legal`.
pub fn masked_policy(out: &AgentOutput, legal: &[Move], mover: Color) -> Result<Vec<f32>> {
    if legal.is_empty() {
        return Err(Error::EmptyLegalSet);
    }
    let logits = legal
        .iter()
        .map(|&m| move_to_policy_index(m, mover).map(|i| out.policy_logits[i]))
        .collect::<Result<Vec<f32>>>()?;
    Ok(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
