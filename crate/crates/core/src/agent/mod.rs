//! The MEMB learner: squashed-Gaussian policy, twin soft-Q and soft-V with a
//! Polyak target, imaginary rollouts, and the model-embedded policy gradient.

mod buffer;
mod learner;
mod losses;
mod policy;
pub mod tabular;
mod value;

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::envs::EnvError;
use crate::models::{ModelError, RewardMode};

pub use buffer::ReplayBuffer;
pub use learner::{evaluate_policy, Agent, IterationRecord, Losses, WorldModelKind};
pub use losses::{
    expansion_targets, policy_objective, q_loss, q_targets, soft_q_target, soft_v_target, v_loss, value_expansion_loss,
    ExpansionBatch, PolicyNoise,
};
pub use policy::Policy;
pub use value::{eval_mlp, ValueFunctions};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("value-expansion horizon must be at least 1, got {0}")]
    InvalidHorizon(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Data the twin Q networks are regressed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QSource {
    /// Real transitions from 𝒟.
    Real,
    /// Model-generated transitions from 𝒟_img.
    #[default]
    Imaginary,
    /// `H`-step value expansion starting from real transitions.
    Expansion,
}

/// States the policy gradient is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyData {
    /// Start states from 𝒟_img, next states sampled from the model.
    #[default]
    Imaginary,
    /// Real transitions only, with the model noise inferred from the observed
    /// next state (SVG-style).
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Actor-critic repetitions per environment step.
    pub m: usize,
    /// Imaginary rollout length.
    pub k: usize,
    /// Value-expansion horizon, used when `q_source = expansion`.
    pub horizon: usize,
    pub q_source: QSource,
    pub policy_data: PolicyData,
    pub reward_mode: RewardMode,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub model_hidden: Vec<usize>,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub model_lr: f64,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    /// Initial `log σ` of the model heads.
    pub model_init_log_std: f64,
    /// Replace the learned models by the environment's own functions.
    pub true_model: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            gamma: 0.99,
            tau: 0.995,
            batch_size: 128,
            m: 5,
            k: 1,
            horizon: 1,
            q_source: QSource::Imaginary,
            policy_data: PolicyData::Imaginary,
            reward_mode: RewardMode::Sampled,
            policy_hidden: vec![256, 256],
            value_hidden: vec![256, 256],
            model_hidden: vec![32, 16],
            policy_lr: 3e-4,
            value_lr: 3e-4,
            model_lr: 3e-4,
            buffer_capacity: 1_000_000,
            warmup_steps: 1000,
            model_init_log_std: -3.0,
            true_model: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.alpha < 0.0 {
            return bad("alpha must be nonnegative");
        }
        if self.batch_size == 0 || self.m == 0 || self.buffer_capacity == 0 {
            return bad("batch_size, m and buffer_capacity must be positive");
        }
        if self.k == 0 || self.k > 5 {
            return bad("k must lie in 1..=5");
        }
        if self.horizon == 0 {
            return Err(AgentError::InvalidHorizon(0));
        }
        Ok(())
    }
}
