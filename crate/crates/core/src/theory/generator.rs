//! Seeded random Lipschitz-class instances on a Cantor-set state embedding.
//!
//! States are the 2ᴸ points `scale·Σ dᵢ 3⁻ⁱ` with ternary digits dᵢ ∈ {0, 2}.
//! A transition map shifts the digits right (a 1/3 contraction), writes a fresh
//! leading digit, optionally reflects (d ↦ 2 − d, an isometry of the set), and
//! lets the action choose the last digit. Every such map lands back in the
//! state set, so kernels are exact mixtures of deterministic maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::mdp::{lipschitz_constants, LipschitzMDP, MixturePolicy, TransitionMixture};
use super::TheoryError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceConfig {
    /// Ternary digits per state; the state set has 2^depth points.
    pub depth: usize,
    pub actions: usize,
    pub components: usize,
    pub policy_components: usize,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self { depth: 4, actions: 3, components: 2, policy_components: 2 }
    }
}

impl InstanceConfig {
    /// Configuration for a given state count (4, 8 or 16) and action count.
    pub fn with_sizes(states: usize, actions: usize) -> Result<Self, TheoryError> {
        let depth = match states {
            4 => 2,
            8 => 3,
            16 => 4,
            _ => return Err(TheoryError::Config(format!("state count must be 4, 8 or 16, got {states}"))),
        };
        if !(2..=4).contains(&actions) {
            return Err(TheoryError::Config(format!("action count must be 2..=4, got {actions}")));
        }
        Ok(Self { depth, actions, ..Self::default() })
    }

    fn validate(&self) -> Result<(), TheoryError> {
        if !(2..=4).contains(&self.depth) || !(2..=4).contains(&self.actions) {
            return Err(TheoryError::Config(format!("{self:?}")));
        }
        if self.components == 0 || self.policy_components == 0 {
            return Err(TheoryError::Config("mixtures need at least one component".into()));
        }
        Ok(())
    }
}

/// Bound-check instance: true MDP, learned model, current and data policies.
#[derive(Clone, Debug, Serialize)]
pub struct Instance {
    pub seed: u64,
    pub mdp: LipschitzMDP,
    pub model: TransitionMixture,
    pub policy: MixturePolicy,
    pub data_policy: MixturePolicy,
}

#[derive(Clone, Copy, Debug)]
struct DigitMap {
    lead: u8,
    reflect: bool,
    /// last digit chosen per action
    tail: [u8; 4],
}

#[derive(Clone, Copy, Debug)]
struct PolicyMap {
    /// digit position read (0 = most significant); None = constant
    reads: Option<usize>,
    choice: [usize; 2],
}

fn digits(index: usize, depth: usize) -> Vec<u8> {
    (0..depth).map(|i| ((index >> (depth - 1 - i)) & 1) as u8 * 2).collect()
}

fn index_of(digits: &[u8]) -> usize {
    digits.iter().fold(0, |acc, &d| (acc << 1) | usize::from(d / 2))
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    let mut w: Vec<f64> = w.iter().map(|x| x / total).collect();
    // exact normalisation so the weights pass the sum check
    let rest: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - rest;
    w
}

fn random_digit_map(rng: &mut ChaCha8Rng) -> DigitMap {
    let mut tail = [0u8; 4];
    for t in &mut tail {
        *t = if rng.random_bool(0.5) { 2 } else { 0 };
    }
    DigitMap { lead: if rng.random_bool(0.5) { 2 } else { 0 }, reflect: rng.random_bool(0.3), tail }
}

fn perturb_digit_map(rng: &mut ChaCha8Rng, m: DigitMap) -> DigitMap {
    let mut out = m;
    if rng.random_bool(0.5) {
        out.lead = 2 - out.lead;
    }
    if rng.random_bool(0.3) {
        out.tail = random_digit_map(rng).tail;
    }
    if rng.random_bool(0.2) {
        out.reflect = !out.reflect;
    }
    out
}

fn apply_digit_map(m: &DigitMap, s: usize, a: usize, depth: usize) -> usize {
    let d = digits(s, depth);
    let mut next = vec![m.lead];
    next.extend(d[..depth - 2].iter().map(|&x| if m.reflect { 2 - x } else { x }));
    next.push(m.tail[a]);
    index_of(&next)
}

fn random_policy_map(rng: &mut ChaCha8Rng, depth: usize, actions: usize) -> PolicyMap {
    let reads = if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..depth)) };
    PolicyMap { reads, choice: [rng.random_range(0..actions), rng.random_range(0..actions)] }
}

fn apply_policy_map(m: &PolicyMap, s: usize, depth: usize) -> usize {
    match m.reads {
        None => m.choice[0],
        Some(q) => m.choice[usize::from(digits(s, depth)[q] / 2)],
    }
}

fn mix_weights(rng: &mut ChaCha8Rng, w: &[f64]) -> Vec<f64> {
    let fresh = dirichlet(rng, w.len());
    let lambda: f64 = rng.random();
    let mut out: Vec<f64> = w.iter().zip(&fresh).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    let n = out.len();
    let rest: f64 = out[..n - 1].iter().sum();
    out[n - 1] = 1.0 - rest;
    out
}

/// Draws one candidate instance (no admissibility check).
fn draw(rng: &mut ChaCha8Rng, cfg: &InstanceConfig, seed: u64) -> Result<Instance, TheoryError> {
    let depth = cfg.depth;
    let ns = 1usize << depth;
    let na = cfg.actions;
    let scale: f64 = rng.random_range(1.0..3.0);
    let states: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            let x: f64 = digits(s, depth).iter().enumerate().map(|(i, &d)| f64::from(d) * 3f64.powi(-(i as i32 + 1))).sum();
            vec![scale * x]
        })
        .collect();
    let spacing: f64 = rng.random_range(0.05..0.6);
    let actions: Vec<Vec<f64>> = (0..na).map(|a| vec![a as f64 * spacing]).collect();

    let tabulate = |m: &DigitMap| -> Vec<Vec<usize>> {
        (0..ns).map(|s| (0..na).map(|a| apply_digit_map(m, s, a, depth)).collect()).collect()
    };
    let true_maps: Vec<DigitMap> = (0..cfg.components).map(|_| random_digit_map(rng)).collect();
    let true_weights = dirichlet(rng, cfg.components);
    let (model_maps, model_weights) = if rng.random_bool(0.15) {
        (true_maps.clone(), true_weights.clone())
    } else {
        let maps = true_maps.iter().map(|&m| perturb_digit_map(rng, m)).collect();
        (maps, mix_weights(rng, &true_weights))
    };
    let transition = TransitionMixture::new(true_maps.iter().map(tabulate).collect(), true_weights)?;
    let model = TransitionMixture::new(model_maps.iter().map(tabulate).collect(), model_weights)?;

    let tab_policy = |m: &PolicyMap| -> Vec<usize> { (0..ns).map(|s| apply_policy_map(m, s, depth)).collect() };
    let pi_maps: Vec<PolicyMap> = (0..cfg.policy_components).map(|_| random_policy_map(rng, depth, na)).collect();
    let pi_weights = dirichlet(rng, cfg.policy_components);
    let (d_maps, d_weights) = if rng.random_bool(0.15) {
        (pi_maps.clone(), pi_weights.clone())
    } else {
        let maps = pi_maps
            .iter()
            .map(|&m| if rng.random_bool(0.5) { random_policy_map(rng, depth, na) } else { m })
            .collect();
        (maps, mix_weights(rng, &pi_weights))
    };
    let policy = MixturePolicy::new(pi_maps.iter().map(tab_policy).collect(), pi_weights)?;
    let data_policy = MixturePolicy::new(d_maps.iter().map(tab_policy).collect(), d_weights)?;

    let amp: f64 = rng.random_range(0.5..2.0);
    let freq: f64 = rng.random_range(0.5..3.0);
    let slope: f64 = rng.random_range(-1.0..1.0);
    let offset: f64 = rng.random_range(-1.0..1.0);
    let reward = (0..ns)
        .map(|s| (0..na).map(|a| amp * (freq * states[s][0]).cos() + slope * actions[a][0] + offset).collect())
        .collect();
    let gamma = rng.random_range(0.5..0.95);
    let initial = if rng.random_bool(0.3) {
        let mut v = vec![0.0; ns];
        v[rng.random_range(0..ns)] = 1.0;
        v
    } else {
        dirichlet(rng, ns)
    };
    let mdp = LipschitzMDP::new(states, actions, transition, reward, gamma, initial)?;
    Ok(Instance { seed, mdp, model, policy, data_policy })
}

/// Draws instances from `seed` until one satisfies K̄ = K_π·K_m < 1.
///
/// Returns the instance and the number of rejected draws. Requiring K̄ < 1
/// (rather than only K̄γ < 1) keeps every bound denominator positive.
pub fn generate_instance(seed: u64, cfg: &InstanceConfig) -> Result<(Instance, usize), TheoryError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    loop {
        let inst = draw(&mut rng, cfg, seed)?;
        let c = lipschitz_constants(&inst.mdp, &[&inst.mdp.transition, &inst.model], &[&inst.policy, &inst.data_policy])?;
        if c.k_bar < 1.0 {
            if rejected > 0 {
                log::debug!("instance seed {seed}: accepted after {rejected} rejected draws");
            }
            return Ok((inst, rejected));
        }
        rejected += 1;
        if rejected > 10_000 {
            return Err(TheoryError::Config("no admissible instance after 10000 draws".into()));
        }
    }
}
