//! Deep Q-learning: network numerics, optimizer, replay memory, the agent
//! loop pieces and the latency reward.

mod adam;
mod agent;
mod checkpoint;
mod network;
mod replay;

pub use adam::{Adam, AdamConfig};
pub use agent::{greedy_index, select_action, td_loss_gradient, td_targets, train_step, DqnAgent};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{ForwardCache, LayerSpec, Mode, NetworkError, NetworkShape, QNetwork, BN_EPS, BN_MOMENTUM, HIDDEN_WIDTH};
pub use replay::{InsufficientTransitions, ReplayBuffer, Transition};

use serde::{Deserialize, Serialize};

use crate::context::ObservedLatency;

/// Reward ceiling of a single step (attained when latency equals the target).
pub const MAX_STEP_REWARD: f64 = 50.0;

/// Sigmoid latency reward: `100 * sigmoid(beta * (l - L))` while the target
/// is met, zero once it is exceeded or the window dropped a frame.
pub fn reward(observed: ObservedLatency, required_ms: f64, beta: f64) -> f64 {
    match observed {
        ObservedLatency::Ms(l) if l <= required_ms => 100.0 / (1.0 + (-beta * (l - required_ms)).exp()),
        _ => 0.0,
    }
}

/// Cell reward of one step: mean of per-UE rewards.
pub fn mean_reward(per_ue: &[f64]) -> f64 {
    if per_ue.is_empty() {
        0.0
    } else {
        per_ue.iter().sum::<f64>() / per_ue.len() as f64
    }
}

/// Hyper-parameters of the DQN training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Soft target update rate.
    pub tau: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Time constant, in agent steps, of the exponential epsilon decay.
    pub epsilon_decay_steps: f64,
    /// Sigmoid steepness per millisecond.
    pub reward_beta: f64,
    pub replay_capacity: usize,
    /// Write a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            steps_per_episode: 150,
            batch_size: 128,
            gamma: 0.2,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            tau: 0.005,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_decay_steps: 1000.0,
            reward_beta: 0.1,
            replay_capacity: 10_000,
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        let decay = if self.epsilon_decay_steps > 0.0 { (-(step as f64) / self.epsilon_decay_steps).exp() } else { 0.0 };
        (self.epsilon_min + (self.epsilon_start - self.epsilon_min) * decay).clamp(0.0, 1.0)
    }

    /// Returns a description of the first violated constraint.
    pub fn validate(&self) -> Result<(), String> {
        let checks: [(bool, &str); 10] = [
            (self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)"),
            (self.tau > 0.0 && self.tau <= 1.0, "tau must lie in (0, 1]"),
            ((0.0..=1.0).contains(&self.epsilon_start), "epsilon_start must lie in [0, 1]"),
            ((0.0..=1.0).contains(&self.epsilon_min), "epsilon_min must lie in [0, 1]"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.replay_capacity >= self.batch_size, "replay_capacity must hold at least one batch"),
            (self.steps_per_episode > 0, "steps_per_episode must be positive"),
            (self.learning_rate > 0.0, "learning_rate must be positive"),
            (self.reward_beta > 0.0, "reward_beta must be positive"),
            (self.epsilon_decay_steps >= 0.0, "epsilon_decay_steps must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err((*msg).to_string()),
            None => Ok(()),
        }
    }
}
