use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::models::{RewardMode, WorldModel};

use super::policy::Policy;
use super::value::{eval_mlp, ValueFunctions};
use super::AgentError;

/// Soft-Q backup target `r + γ·V(s')`.
pub fn soft_q_target(r: f64, gamma: f64, v_next: f64) -> f64 {
    r + gamma * v_next
}

/// Soft-V target `Q(s, a) − α·log π(a|s)` for a sampled `a`.
pub fn soft_v_target(q: f64, alpha: f64, log_pi: f64) -> f64 {
    q - alpha * log_pi
}

/// `½·mean((x − target)²)` over `[rows, 1]` predictions and constant targets.
fn half_mse(tape: &mut Tape, x: Var, target: Vec<f64>) -> Result<Var, AutodiffError> {
    let rows = target.len();
    let t = tape.input(Tensor::matrix(rows, 1, target)?);
    let d = tape.sub(x, t)?;
    let sq = tape.square(d)?;
    let total = tape.sum(sq, None)?;
    tape.scale(total, 0.5 / rows as f64)
}

/// `½·mean(V_ψ(s) − [min_i Q_i(s, a) − α·log π(a|s)])²` with `a ~ π(·|s)` drawn
/// through `eta`; the bracket is evaluated as a constant.
pub fn v_loss(tape: &mut Tape, vf: &ValueFunctions, policy: &Policy, s: &Tensor, eta: &Tensor, alpha: f64) -> Result<Var, AgentError> {
    if s.rows() == 0 || s.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let target = {
        let mut t = Tape::new();
        let sv = t.input(s.clone());
        let ev = t.input(eta.clone());
        let (a, logp) = policy.sample(&mut t, sv, ev)?;
        let q0 = vf.q_forward(&mut t, 0, sv, a)?;
        let q1 = vf.q_forward(&mut t, 1, sv, a)?;
        let (q0, q1, logp) = (t.value(q0).data(), t.value(q1).data(), t.value(logp).data());
        (0..q0.len()).map(|i| soft_v_target(q0[i].min(q1[i]), alpha, logp[i])).collect()
    };
    let sv = tape.input(s.clone());
    let v = vf.v.forward(tape, sv)?;
    Ok(half_mse(tape, v, target)?)
}

/// Constant soft-Q targets `r + γ·V_ψ̄(s')`.
pub fn q_targets(vf: &ValueFunctions, r: &[f64], s_next: &Tensor, gamma: f64) -> Result<Vec<f64>, AutodiffError> {
    let v_next = eval_mlp(&vf.v_target, s_next)?;
    Ok(r.iter().zip(&v_next).map(|(&r, &v)| soft_q_target(r, gamma, v)).collect())
}

/// `½·mean(Q_i(s, a) − r − γ·V_ψ̄(s'))²` for twin `i`.
pub fn q_loss(tape: &mut Tape, vf: &ValueFunctions, i: usize, s: &Tensor, a: &Tensor, targets: &[f64]) -> Result<Var, AgentError> {
    if targets.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let sv = tape.input(s.clone());
    let av = tape.input(a.clone());
    let q = vf.q_forward(tape, i, sv, av)?;
    Ok(half_mse(tape, q, targets.to_vec())?)
}

/// A batch of `H`-step rollouts: `states[t]`, `actions[t]`, `rewards[t]` for
/// `t < H`, plus the final `states[H]`.
#[derive(Debug, Clone)]
pub struct ExpansionBatch {
    pub states: Vec<Tensor>,
    pub actions: Vec<Tensor>,
    pub rewards: Vec<Vec<f64>>,
}

impl ExpansionBatch {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Discounted returns `G_t = r_t + γ·G_{t+1}`, `G_H = V_ψ̄(s_H)`, per step.
pub fn expansion_targets(vf: &ValueFunctions, batch: &ExpansionBatch, gamma: f64) -> Result<Vec<Vec<f64>>, AutodiffError> {
    let h = batch.horizon();
    let mut g = eval_mlp(&vf.v_target, &batch.states[h])?;
    let mut out = vec![Vec::new(); h];
    for t in (0..h).rev() {
        g = batch.rewards[t].iter().zip(&g).map(|(&r, &v)| soft_q_target(r, gamma, v)).collect();
        out[t] = g.clone();
    }
    Ok(out)
}

/// `(1/H)·Σ_t ½·mean_b(Q_i(ŝ_t, â_t) − G_t)²`, evaluated as one stacked batch so
/// that `H = 1` performs exactly the operations of [`q_loss`].
pub fn value_expansion_loss(tape: &mut Tape, vf: &ValueFunctions, i: usize, batch: &ExpansionBatch, gamma: f64) -> Result<Var, AgentError> {
    let h = batch.horizon();
    if h == 0 {
        return Err(AgentError::InvalidHorizon(h));
    }
    let targets = expansion_targets(vf, batch, gamma)?;
    let stack = |ts: &[Tensor]| -> Result<Tensor, AutodiffError> {
        let rows: Vec<&[f64]> = ts.iter().flat_map(|t| (0..t.rows()).map(move |r| t.row(r))).collect();
        Tensor::from_rows(&rows)
    };
    let s = stack(&batch.states[..h])?;
    let a = stack(&batch.actions)?;
    let flat: Vec<f64> = targets.into_iter().flatten().collect();
    q_loss(tape, vf, i, &s, &a, &flat)
}

/// Noise draws feeding one policy-objective evaluation.
#[derive(Debug, Clone)]
pub struct PolicyNoise {
    pub eta: Tensor,
    pub zeta_s: Tensor,
    pub zeta_r: Tensor,
}

/// `mean(r̂(s, a, ζ_φ) − α·log π(a|s) + γ·V_ψ(f(s, a, ζ_ω)))` with `a = κ(s, η; θ)`;
/// differentiable in θ through every path.
#[allow(clippy::too_many_arguments)]
pub fn policy_objective(
    tape: &mut Tape,
    policy: &Policy,
    model: &dyn WorldModel,
    vf: &ValueFunctions,
    s: &Tensor,
    noise: &PolicyNoise,
    alpha: f64,
    gamma: f64,
    reward_mode: RewardMode,
) -> Result<Var, AgentError> {
    let sv = tape.input(s.clone());
    let eta = tape.input(noise.eta.clone());
    let (a, logp) = policy.sample(tape, sv, eta)?;
    let zeta_r = match reward_mode {
        RewardMode::Sampled => noise.zeta_r.clone(),
        RewardMode::Mean => Tensor::zeros(noise.zeta_r.shape()),
    };
    let zr = tape.input(zeta_r);
    let zs = tape.input(noise.zeta_s.clone());
    let r = model.reward(tape, sv, a, zr)?;
    let s_next = model.next_state(tape, sv, a, zs)?;
    let v_next = vf.v.forward(tape, s_next)?;
    let ent = tape.scale(logp, -alpha)?;
    let disc = tape.scale(v_next, gamma)?;
    let total = tape.add(r, ent)?;
    let total = tape.add(total, disc)?;
    Ok(tape.mean(total, None)?)
}
