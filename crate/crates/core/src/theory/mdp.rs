//! Finite MDPs embedded in Euclidean space, with Lipschitz-class kernels.

use serde::Serialize;

use super::wasserstein::{euclidean, w1_on_points};
use super::TheoryError;

/// Dense transition table `p[s][a][s']`.
pub type Kernel = Vec<Vec<Vec<f64>>>;
/// Dense policy table `π[s][a]`.
pub type PolicyTable = Vec<Vec<f64>>;

const WEIGHT_TOL: f64 = 1e-12;

fn check_weights(weights: &[f64]) -> Result<(), TheoryError> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > WEIGHT_TOL {
        return Err(TheoryError::NotDistribution { which: "mixture weights", detail: format!("{weights:?}") });
    }
    Ok(())
}

/// Transition kernel `Σ_m g_m · δ(f_m(s, a))` with state-action independent weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionMixture {
    /// `maps[m][s][a]` = index of `f_m(s, a)` in the state set.
    pub maps: Vec<Vec<Vec<usize>>>,
    pub weights: Vec<f64>,
}

impl TransitionMixture {
    pub fn new(maps: Vec<Vec<Vec<usize>>>, weights: Vec<f64>) -> Result<Self, TheoryError> {
        check_weights(&weights)?;
        if maps.len() != weights.len() {
            return Err(TheoryError::Dimension("one weight per map".into()));
        }
        Ok(Self { maps, weights })
    }

    pub fn dense(&self, states: usize) -> Kernel {
        let actions = self.maps[0][0].len();
        let mut p = vec![vec![vec![0.0; states]; actions]; states];
        for (map, &w) in self.maps.iter().zip(&self.weights) {
            for s in 0..states {
                for a in 0..actions {
                    p[s][a][map[s][a]] += w;
                }
            }
        }
        p
    }
}

/// Policy `Σ g · δ(f_π(s))` over deterministic state→action maps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixturePolicy {
    /// `maps[k][s]` = action index chosen by the k-th map.
    pub maps: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl MixturePolicy {
    pub fn new(maps: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self, TheoryError> {
        check_weights(&weights)?;
        if maps.len() != weights.len() {
            return Err(TheoryError::Dimension("one weight per map".into()));
        }
        Ok(Self { maps, weights })
    }

    pub fn dense(&self, actions: usize) -> PolicyTable {
        let states = self.maps[0].len();
        let mut pi = vec![vec![0.0; actions]; states];
        for (map, &w) in self.maps.iter().zip(&self.weights) {
            for s in 0..states {
                pi[s][map[s]] += w;
            }
        }
        pi
    }
}

/// Finite MDP with states and actions embedded as points.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzMDP {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub transition: TransitionMixture,
    /// `reward[s][a]`, known exactly.
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    pub initial: Vec<f64>,
}

impl LipschitzMDP {
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        transition: TransitionMixture,
        reward: Vec<Vec<f64>>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self, TheoryError> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(TheoryError::Discount(gamma));
        }
        let mdp = Self { states, actions, transition, reward, gamma, initial };
        mdp.check_kernel(&mdp.transition)?;
        if mdp.reward.len() != mdp.num_states() || mdp.reward.iter().any(|r| r.len() != mdp.num_actions()) {
            return Err(TheoryError::Dimension("reward must be states x actions".into()));
        }
        let total: f64 = mdp.initial.iter().sum();
        if mdp.initial.len() != mdp.num_states() || (total - 1.0).abs() > 1e-9 || mdp.initial.iter().any(|&x| x < 0.0) {
            return Err(TheoryError::NotDistribution { which: "initial", detail: format!("sums to {total}") });
        }
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Checks that every map of `kernel` is total on S×A and lands in S.
    pub fn check_kernel(&self, kernel: &TransitionMixture) -> Result<(), TheoryError> {
        let (ns, na) = (self.num_states(), self.num_actions());
        let ok = kernel
            .maps
            .iter()
            .all(|m| m.len() == ns && m.iter().all(|row| row.len() == na && row.iter().all(|&t| t < ns)));
        if ok {
            Ok(())
        } else {
            Err(TheoryError::Dimension("transition map must send S x A into S".into()))
        }
    }

    pub fn check_policy(&self, policy: &MixturePolicy) -> Result<(), TheoryError> {
        let ok = policy
            .maps
            .iter()
            .all(|m| m.len() == self.num_states() && m.iter().all(|&a| a < self.num_actions()));
        if ok {
            Ok(())
        } else {
            Err(TheoryError::Dimension("policy map must send S into A".into()))
        }
    }

    pub fn kernel(&self) -> Kernel {
        self.transition.dense(self.num_states())
    }

    pub fn policy_table(&self, policy: &MixturePolicy) -> PolicyTable {
        policy.dense(self.num_actions())
    }

    /// Embedded state-action point `(s, a)`.
    pub fn joint_point(&self, s: usize, a: usize) -> Vec<f64> {
        let mut p = self.states[s].clone();
        p.extend_from_slice(&self.actions[a]);
        p
    }

    pub fn joint_points(&self) -> Vec<Vec<f64>> {
        (0..self.num_states())
            .flat_map(|s| (0..self.num_actions()).map(move |a| (s, a)))
            .map(|(s, a)| self.joint_point(s, a))
            .collect()
    }
}

/// Exhaustive Lipschitz constant `max d(f(x₁), f(x₂)) / d(x₁, x₂)` of a map
/// given by its domain points and their images.
pub fn lipschitz_constant(domain: &[Vec<f64>], image: &[Vec<f64>]) -> Result<f64, TheoryError> {
    let mut k: f64 = 0.0;
    for i in 0..domain.len() {
        for j in i + 1..domain.len() {
            let d = euclidean(&domain[i], &domain[j]);
            if d == 0.0 {
                return Err(TheoryError::DuplicatePoint(i, j));
            }
            k = k.max(euclidean(&image[i], &image[j]) / d);
        }
    }
    Ok(k)
}

/// Lipschitz constants entering the return bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzConstants {
    pub k_m: f64,
    pub k_pi: f64,
    pub k_r: f64,
    pub k_bar: f64,
}

/// Constant of one transition map `(s, a) ↦ f(s, a)` on the joint embedding.
pub fn transition_map_constant(mdp: &LipschitzMDP, map: &[Vec<usize>]) -> Result<f64, TheoryError> {
    let mut image = Vec::new();
    for row in map {
        for &t in row {
            image.push(mdp.states[t].clone());
        }
    }
    lipschitz_constant(&mdp.joint_points(), &image)
}

/// Constant of the lifted policy map `s ↦ (s, f_π(s))`.
///
/// The lift is what the joint-distribution drift needs: pushing a state
/// distribution through `s ↦ (s, f_π(s))` contracts W by at most this factor,
/// whereas the Lipschitz constant of `f_π` alone can be 0 while the joint
/// distributions still differ. It is therefore always ≥ 1.
pub fn policy_map_constant(mdp: &LipschitzMDP, map: &[usize]) -> Result<f64, TheoryError> {
    let image: Vec<Vec<f64>> = map.iter().enumerate().map(|(s, &a)| mdp.joint_point(s, a)).collect();
    lipschitz_constant(&mdp.states, &image)
}

pub fn reward_constant(mdp: &LipschitzMDP) -> Result<f64, TheoryError> {
    let image: Vec<Vec<f64>> = mdp.reward.iter().flatten().map(|&r| vec![r]).collect();
    lipschitz_constant(&mdp.joint_points(), &image)
}

/// `(K_m, K_π, K_r, K̄ = K_π·K_m)`, maxed over every map of every kernel and policy given.
pub fn lipschitz_constants(
    mdp: &LipschitzMDP,
    kernels: &[&TransitionMixture],
    policies: &[&MixturePolicy],
) -> Result<LipschitzConstants, TheoryError> {
    let mut k_m: f64 = 0.0;
    for kernel in kernels {
        mdp.check_kernel(kernel)?;
        for map in &kernel.maps {
            k_m = k_m.max(transition_map_constant(mdp, map)?);
        }
    }
    let mut k_pi: f64 = 0.0;
    for policy in policies {
        mdp.check_policy(policy)?;
        for map in &policy.maps {
            k_pi = k_pi.max(policy_map_constant(mdp, map)?);
        }
    }
    let k_r = reward_constant(mdp)?;
    Ok(LipschitzConstants { k_m, k_pi, k_r, k_bar: k_pi * k_m })
}

/// `(ε_m, ε_π)`: worst-case W1 between transition rows over (s, a), and between
/// policy rows over s.
pub fn epsilons(
    mdp: &LipschitzMDP,
    p_true: &Kernel,
    p_hat: &Kernel,
    pi: &PolicyTable,
    pi_d: &PolicyTable,
) -> Result<(f64, f64), TheoryError> {
    let mut eps_m: f64 = 0.0;
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            eps_m = eps_m.max(w1_on_points(&p_true[s][a], &p_hat[s][a], &mdp.states)?);
        }
    }
    let mut eps_pi: f64 = 0.0;
    for s in 0..mdp.num_states() {
        eps_pi = eps_pi.max(w1_on_points(&pi[s], &pi_d[s], &mdp.actions)?);
    }
    Ok((eps_m, eps_pi))
}
