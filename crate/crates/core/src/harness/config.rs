use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, PolicyData, QSource};
use crate::envs::make_system;
use crate::models::RewardMode;

use super::HarnessError;

/// Everything a training run depends on. Serialized verbatim into the run
/// directory; its hash names the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Environment steps between deterministic evaluations.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Epochs between checkpoints; a final checkpoint is always written.
    pub checkpoint_every: usize,
    /// `(s, a)` pairs drawn from visited transitions for the per-epoch model error.
    pub model_error_samples: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub m: usize,
    pub k: usize,
    pub horizon: usize,
    pub q_source: QSource,
    pub policy_data: PolicyData,
    pub reward_mode: RewardMode,
    pub true_model: bool,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub model_lr: f64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub model_hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub model_init_log_std: f64,
    /// Also dump every real transition to `trajectories.jsonl`.
    pub dump_trajectories: bool,
}

impl RunConfig {
    /// Built-in defaults for `env`. The toy tasks all use the Pendulum column of
    /// the hyper-parameter table.
    pub fn defaults_for(env: &str) -> Result<Self, HarnessError> {
        let system = make_system(env)?;
        let a = AgentConfig::default();
        Ok(Self {
            env: system.spec().name.to_string(),
            seed: 0,
            epochs: 50,
            steps_per_epoch: 1000,
            eval_interval: 1000,
            eval_episodes: 10,
            checkpoint_every: 10,
            model_error_samples: 1000,
            alpha: 0.2,
            gamma: a.gamma,
            tau: a.tau,
            batch_size: a.batch_size,
            m: 5,
            k: a.k,
            horizon: a.horizon,
            q_source: a.q_source,
            policy_data: a.policy_data,
            reward_mode: a.reward_mode,
            true_model: false,
            policy_lr: 3e-4,
            value_lr: 3e-4,
            model_lr: 3e-4,
            policy_hidden: vec![256, 256],
            value_hidden: vec![256, 256],
            model_hidden: vec![32, 16],
            buffer_capacity: a.buffer_capacity,
            warmup_steps: a.warmup_steps,
            model_init_log_std: a.model_init_log_std,
            dump_trajectories: true,
        })
    }

    /// Resolves a config with precedence overrides > file > env defaults. The
    /// env itself is taken from the overrides, then the file, then `pendulum`.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self, HarnessError> {
        let file_table: toml::Table = match file {
            Some(text) => toml::from_str(text).map_err(|e| HarnessError::Config(format!("config file: {e}")))?,
            None => toml::Table::new(),
        };
        let mut layer = file_table;
        for (key, raw) in overrides {
            layer.insert(key.clone(), parse_value(raw));
        }
        let env = match layer.get("env") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(HarnessError::Config(format!("env must be a string, got {other}"))),
            None => "pendulum".to_string(),
        };
        let defaults = Self::defaults_for(&env)?;
        let mut table = toml::Table::try_from(&defaults).map_err(|e| HarnessError::Config(e.to_string()))?;
        for (key, value) in layer {
            if !table.contains_key(&key) {
                return Err(HarnessError::Config(format!("unknown key `{key}`")));
            }
            table.insert(key, value);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        // canonical env name
        let cfg = Self {
            env: make_system(&cfg.env)?.spec().name.to_string(),
            ..cfg
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        make_system(&self.env)?;
        if self.steps_per_epoch == 0 || self.eval_interval == 0 || self.checkpoint_every == 0 {
            return Err(HarnessError::Config(
                "steps_per_epoch, eval_interval and checkpoint_every must be positive".into(),
            ));
        }
        self.agent_config().validate()?;
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            tau: self.tau,
            batch_size: self.batch_size,
            m: self.m,
            k: self.k,
            horizon: self.horizon,
            q_source: self.q_source,
            policy_data: self.policy_data,
            reward_mode: self.reward_mode,
            policy_hidden: self.policy_hidden.clone(),
            value_hidden: self.value_hidden.clone(),
            model_hidden: self.model_hidden.clone(),
            policy_lr: self.policy_lr,
            value_lr: self.value_lr,
            model_lr: self.model_lr,
            buffer_capacity: self.buffer_capacity,
            warmup_steps: self.warmup_steps,
            model_init_log_std: self.model_init_log_std,
            true_model: self.true_model,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// The exact text written to `config.toml`.
    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// SHA-256 of the serialized config, hex encoded.
    pub fn hash(&self) -> Result<String, HarnessError> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Directory name under the run root: env, seed and a hash prefix.
    pub fn run_name(&self) -> Result<String, HarnessError> {
        Ok(format!("{}-seed{}-{}", self.env, self.seed, &self.hash()?[..12]))
    }
}

/// Parses a CLI override as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), HarnessError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().replace('-', "_"), v.trim().to_string()))
}
