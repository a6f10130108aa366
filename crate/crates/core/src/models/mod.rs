//! Learned stochastic dynamics and reward models, the true-model plug-in, and
//! model-error tracking.

mod checkpoint;
mod net;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{gaussian_reparam, AdamConfig, AutodiffError, Tape, Tensor, Var};
use crate::envs::{System, Transition};

pub use checkpoint::{Checkpoint, NetSection, MAGIC, VERSION};
pub use net::{GaussianNet, Mlp, Normalizer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("model fault: {0}")]
    Fault(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether rollouts draw the reward noise `ζ_φ` or use the mean reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Sampled,
    Mean,
}

/// Stacks row vectors into a `[rows, width]` tensor.
pub fn stack(rows: &[&[f64]]) -> Result<Tensor, AutodiffError> {
    Tensor::from_rows(rows)
}

pub fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("finite normal draws")
}

/// Gaussian model over `s ⊕ a` predicting the state delta; the exposed prediction
/// is `s + μ + σ·ζ`.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    net: GaussianNet,
    state_dim: usize,
    action_dim: usize,
}

/// Gaussian model over `s ⊕ a` predicting a scalar reward `μ + σ·ζ`.
#[derive(Debug, Clone)]
pub struct RewardModel {
    net: GaussianNet,
}

impl DynamicsModel {
    /// Output layer starts at zero, so the untrained model is the identity map
    /// in the mean; `init_log_std` sets the initial noise scale.
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut impl Rng) -> Self {
        let mut net = GaussianNet::new(state_dim + action_dim, hidden, state_dim, true, rng);
        net.zero_output(init_log_std);
        Self {
            net,
            state_dim,
            action_dim,
        }
    }

    pub fn from_net(net: GaussianNet, action_dim: usize) -> Self {
        let state_dim = net.out_dim();
        Self {
            net,
            state_dim,
            action_dim,
        }
    }

    pub fn net(&self) -> &GaussianNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut GaussianNet {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// `(μ_ω, log σ_ω)` of the delta.
    pub fn delta_distribution(&self, tape: &mut Tape, s: Var, a: Var) -> Result<(Var, Var), ModelError> {
        let x = tape.concat_cols(&[s, a])?;
        Ok(self.net.forward(tape, x)?)
    }

    pub fn predict_next_state(&self, tape: &mut Tape, s: Var, a: Var, zeta: Var) -> Result<Var, ModelError> {
        let (mu, log_std) = self.delta_distribution(tape, s, a)?;
        let delta = gaussian_reparam(tape, mu, log_std, zeta)?;
        Ok(tape.add(s, delta)?)
    }
}

impl RewardModel {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut impl Rng) -> Self {
        let mut net = GaussianNet::new(state_dim + action_dim, hidden, 1, true, rng);
        net.zero_output(init_log_std);
        Self { net }
    }

    pub fn from_net(net: GaussianNet) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &GaussianNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut GaussianNet {
        &mut self.net
    }

    /// `[rows, 1]` rewards.
    pub fn predict_reward(&self, tape: &mut Tape, s: Var, a: Var, zeta: Var) -> Result<Var, ModelError> {
        let x = tape.concat_cols(&[s, a])?;
        let (mu, log_std) = self.net.forward(tape, x)?;
        Ok(gaussian_reparam(tape, mu, log_std, zeta)?)
    }
}

/// Differentiable environment model used by rollouts and the policy gradient.
///
/// `s`, `a` are `[rows, dim]`; `zeta` is `[rows, state_dim]` for dynamics and
/// `[rows, 1]` for rewards. Rewards come back as `[rows, 1]`.
pub trait WorldModel {
    fn next_state(&self, tape: &mut Tape, s: Var, a: Var, zeta: Var) -> Result<Var, ModelError>;
    fn reward(&self, tape: &mut Tape, s: Var, a: Var, zeta: Var) -> Result<Var, ModelError>;
    /// False for the true-model plug-in, which has nothing to train.
    fn is_learned(&self) -> bool;
}

/// The learned dynamics/reward pair.
#[derive(Debug, Clone)]
pub struct LearnedModel {
    pub dynamics: DynamicsModel,
    pub reward: RewardModel,
}

/// Model-side configuration shared by constructors and training.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub adam: AdamConfig,
}

impl LearnedModel {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            dynamics: DynamicsModel::new(state_dim, action_dim, &cfg.hidden, cfg.init_log_std, rng),
            reward: RewardModel::new(state_dim, action_dim, &cfg.hidden, cfg.init_log_std, rng),
        }
    }

    /// Feeds a real transition into both input normalisers.
    pub fn observe(&mut self, t: &Transition) {
        let x: Vec<f64> = t.s.iter().chain(&t.a).copied().collect();
        self.dynamics.net_mut().observe_input(&x);
        self.reward.net_mut().observe_input(&x);
    }

    pub fn checkpoint_sections(&self) -> Vec<NetSection> {
        vec![
            NetSection::from_gaussian("dynamics", self.dynamics.net()),
            NetSection::from_gaussian("reward", self.reward.net()),
        ]
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, action_dim: usize) -> Result<Self, ModelError> {
        Ok(Self {
            dynamics: DynamicsModel::from_net(ckpt.section("dynamics")?.to_gaussian()?, action_dim),
            reward: RewardModel::from_net(ckpt.section("reward")?.to_gaussian()?),
        })
    }

    /// One Adam step on each of `½·E‖f(s,a,ζ_ω) − s'‖²` and `½·E(r̂(s,a,ζ_φ) − r)²`.
    /// Returns the losses before the step.
    pub fn train_step(&mut self, batch: &[&Transition], adam: &AdamConfig, rng: &mut impl Rng) -> Result<(f64, f64), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n = batch.len();
        let ds = self.dynamics.state_dim;
        let mut tape = Tape::new();
        let s = tape.input(stack(&batch.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>())?);
        let a = tape.input(stack(&batch.iter().map(|t| t.a.as_slice()).collect::<Vec<_>>())?);
        let s_next = tape.input(stack(&batch.iter().map(|t| t.s_next.as_slice()).collect::<Vec<_>>())?);
        let r = tape.input(Tensor::matrix(n, 1, batch.iter().map(|t| t.r).collect())?);
        let zeta_w = tape.input(standard_normal(rng, n, ds));
        let zeta_r = tape.input(standard_normal(rng, n, 1));

        let pred = self.dynamics.predict_next_state(&mut tape, s, a, zeta_w)?;
        let dyn_loss = half_mean_sq_rows(&mut tape, pred, s_next)?;
        let r_hat = self.reward.predict_reward(&mut tape, s, a, zeta_r)?;
        let rew_loss = half_mean_sq_rows(&mut tape, r_hat, r)?;

        let dp = self.dynamics.net.params_mut();
        dp.zero_grad();
        tape.backward(dyn_loss, &mut [dp])?;
        dp.adam_step(adam);
        let rp = self.reward.net.params_mut();
        rp.zero_grad();
        tape.backward(rew_loss, &mut [rp])?;
        rp.adam_step(adam);
        Ok((tape.value(dyn_loss).item(), tape.value(rew_loss).item()))
    }
}

/// `½ · mean over rows of ‖x − y‖²`.
pub fn half_mean_sq_rows(tape: &mut Tape, x: Var, y: Var) -> Result<Var, AutodiffError> {
    let rows = tape.value(x).rows() as f64;
    let d = tape.sub(x, y)?;
    let sq = tape.square(d)?;
    let total = tape.sum(sq, None)?;
    tape.scale(total, 0.5 / rows)
}

impl WorldModel for LearnedModel {
    fn next_state(&self, tape: &mut Tape, s: Var, a: Var, zeta: Var) -> Result<Var, ModelError> {
        self.dynamics.predict_next_state(tape, s, a, zeta)
    }

    fn reward(&self, tape: &mut Tape, s: Var, a: Var, zeta: Var) -> Result<Var, ModelError> {
        self.reward.predict_reward(tape, s, a, zeta)
    }

    fn is_learned(&self) -> bool {
        true
    }
}

/// The environment's own dynamics and reward, differentiated by central finite
/// differences. Noise inputs are ignored.
#[derive(Debug, Clone)]
pub struct TrueModel {
    system: Arc<dyn System>,
    pub fd_step: f64,
}

impl TrueModel {
    pub fn new(system: Arc<dyn System>) -> Self {
        Self { system, fd_step: 1e-6 }
    }

    pub fn system(&self) -> &Arc<dyn System> {
        &self.system
    }
}

impl WorldModel for TrueModel {
    fn next_state(&self, tape: &mut Tape, s: Var, a: Var, _zeta: Var) -> Result<Var, ModelError> {
        let ds = self.system.spec().obs_dim;
        let x = tape.concat_cols(&[s, a])?;
        let sys = self.system.clone();
        Ok(tape.row_map_fd(x, ds, self.fd_step, move |row| sys.true_dynamics(&row[..ds], &row[ds..]))?)
    }

    fn reward(&self, tape: &mut Tape, s: Var, a: Var, _zeta: Var) -> Result<Var, ModelError> {
        let ds = self.system.spec().obs_dim;
        let x = tape.concat_cols(&[s, a])?;
        let sys = self.system.clone();
        Ok(tape.row_map_fd(x, 1, self.fd_step, move |row| vec![sys.true_reward(&row[..ds], &row[ds..])])?)
    }

    fn is_learned(&self) -> bool {
        false
    }
}

/// Mean prediction (`ζ = 0`) errors against the true functions: returns
/// `(mean ‖ŝ' − s'‖₂, mean |r̂ − r|)` over the given `(s, a)` pairs.
pub fn model_error_eval(model: &dyn WorldModel, system: &dyn System, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, f64), ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = pairs.len();
    let ds = system.spec().obs_dim;
    let mut tape = Tape::new();
    let s = tape.input(stack(&pairs.iter().map(|p| p.0.as_slice()).collect::<Vec<_>>())?);
    let a = tape.input(stack(&pairs.iter().map(|p| p.1.as_slice()).collect::<Vec<_>>())?);
    let z_s = tape.input(Tensor::zeros(&[n, ds]));
    let z_r = tape.input(Tensor::zeros(&[n, 1]));
    let pred_s = model.next_state(&mut tape, s, a, z_s)?;
    let pred_r = model.reward(&mut tape, s, a, z_r)?;
    let (pred_s, pred_r) = (tape.value(pred_s), tape.value(pred_r));
    let (mut trans, mut rew) = (0.0, 0.0);
    for (i, (si, ai)) in pairs.iter().enumerate() {
        let truth = system.true_dynamics(si, ai);
        trans += pred_s.row(i).iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
        rew += (pred_r.row(i)[0] - system.true_reward(si, ai)).abs();
    }
    Ok((trans / n as f64, rew / n as f64))
}

/// Draws `n` `(s, a)` pairs uniformly (with replacement) from visited transitions.
pub fn sample_pairs(visited: &[Transition], n: usize, rng: &mut impl Rng) -> Vec<(Vec<f64>, Vec<f64>)> {
    if visited.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let t = &visited[rng.random_range(0..visited.len())];
            (t.s.clone(), t.a.clone())
        })
        .collect()
}
