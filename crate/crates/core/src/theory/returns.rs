//! Exact discounted returns by forward propagation of state distributions.

use super::mdp::{Kernel, LipschitzMDP, PolicyTable};
use super::TheoryError;

/// Truncation tolerance used by the bound checks.
pub const HORIZON_EPS: f64 = 1e-10;

/// One step of `ρ' (s') = Σ_{s,a} ρ(s) π(a|s) p(s'|s,a)`.
pub fn propagate(rho: &[f64], p: &Kernel, pi: &PolicyTable) -> Vec<f64> {
    let mut next = vec![0.0; rho.len()];
    for (s, &mass) in rho.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (a, &pa) in pi[s].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (t, &pt) in p[s][a].iter().enumerate() {
                next[t] += mass * pa * pt;
            }
        }
    }
    next
}

/// Joint state-action distribution `ρ(s) π(a|s)`, flattened row-major.
pub fn joint(rho: &[f64], pi: &PolicyTable) -> Vec<f64> {
    rho.iter().zip(pi).flat_map(|(&m, row)| row.iter().map(move |&pa| m * pa)).collect()
}

fn expected_reward(rho: &[f64], pi: &PolicyTable, reward: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for s in 0..rho.len() {
        for (a, &pa) in pi[s].iter().enumerate() {
            total += rho[s] * pa * reward[s][a];
        }
    }
    total
}

fn check_gamma(gamma: f64) -> Result<(), TheoryError> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(TheoryError::Discount(gamma))
    }
}

/// Tail mass bound: after step `t` the remaining return is at most γᵗ·r_max/(1−γ).
fn truncated(gamma: f64, discount: f64, r_max: f64, horizon_eps: f64) -> bool {
    discount * r_max / (1.0 - gamma) < horizon_eps
}

/// Return of running `head` for `switch` steps and then `tail` forever.
///
/// Each stage is a (kernel, policy) pair; rewards come from `mdp.reward`.
pub fn switched_return(
    mdp: &LipschitzMDP,
    head: (&Kernel, &PolicyTable),
    switch: usize,
    tail: (&Kernel, &PolicyTable),
    horizon_eps: f64,
) -> Result<f64, TheoryError> {
    check_gamma(mdp.gamma)?;
    let r_max = mdp.reward.iter().flatten().fold(0.0f64, |m, r| m.max(r.abs()));
    let mut rho = mdp.initial.clone();
    let mut discount = 1.0;
    let mut total = 0.0;
    let mut t = 0;
    while !truncated(mdp.gamma, discount, r_max, horizon_eps) {
        let (p, pi) = if t < switch { head } else { tail };
        total += discount * expected_reward(&rho, pi, &mdp.reward);
        rho = propagate(&rho, p, pi);
        discount *= mdp.gamma;
        t += 1;
    }
    Ok(total)
}

/// `η = E Σ γᵗ r(s_t, a_t)` under kernel `p` and policy `pi` from `mdp.initial`.
pub fn exact_return(mdp: &LipschitzMDP, p: &Kernel, pi: &PolicyTable, horizon_eps: f64) -> Result<f64, TheoryError> {
    switched_return(mdp, (p, pi), 0, (p, pi), horizon_eps)
}

/// Return of the k-step branched rollout: `k` imaginary steps of `(p_hat, pi)`
/// from the initial distribution, after which the process continues under the
/// true kernel and the data-collecting policy `(p_true, pi_d)`.
pub fn branched_return(
    mdp: &LipschitzMDP,
    p_true: &Kernel,
    p_hat: &Kernel,
    pi_d: &PolicyTable,
    pi: &PolicyTable,
    k: usize,
    horizon_eps: f64,
) -> Result<f64, TheoryError> {
    switched_return(mdp, (p_hat, pi), k, (p_true, pi_d), horizon_eps)
}

/// State distributions `ρ_0 … ρ_n` under a fixed (kernel, policy).
pub fn state_distributions(mdp: &LipschitzMDP, p: &Kernel, pi: &PolicyTable, n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![mdp.initial.clone()];
    for _ in 0..n {
        let next = propagate(out.last().expect("non-empty"), p, pi);
        out.push(next);
    }
    out
}
