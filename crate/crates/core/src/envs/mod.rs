//! Deterministic toy control environments with analytically known dynamics.

mod mass_spring;
mod pendulum;
mod point_mass;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mass_spring::MassSpringDamper;
pub use pendulum::Pendulum;
pub use point_mass::PointMass2D;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown environment `{0}` (expected one of: pendulum, point_mass, mass_spring_damper)")]
    UnknownEnv(String),
    #[error("environment fault: non-finite state after step {step}")]
    Fault { step: usize },
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("episode finished; call reset first")]
    EpisodeOver,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Actions live in `[-action_bound, action_bound]` in every dimension.
    pub action_bound: f64,
    pub horizon: usize,
    pub dt: f64,
    /// Upper bound on `|r(s, a)|` over the reachable state space.
    pub reward_bound: f64,
}

/// Pure dynamics and reward over observation vectors.
///
/// Observations fully determine the physical state, so these functions are the
/// single implementation behind [`Env::step`] and behind the true-model plug-in.
pub trait System: Send + Sync + std::fmt::Debug {
    fn spec(&self) -> &EnvSpec;
    /// `s'` for observation `s` and an already-clipped action `a`.
    fn true_dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64>;
    fn true_reward(&self, s: &[f64], a: &[f64]) -> f64;
    /// Draws an initial observation.
    fn initial_observation(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Unwrapped physical coordinates tracked alongside observations.
    fn physical_state(&self, s: &[f64]) -> Vec<f64> {
        s.to_vec()
    }
    /// Advances the physical coordinates given the observation reached.
    fn advance_physical(&self, _prev: &[f64], next_obs: &[f64]) -> Vec<f64> {
        next_obs.to_vec()
    }
}

/// Builds the system registered under `name`.
pub fn make_system(name: &str) -> Result<Arc<dyn System>, EnvError> {
    match name {
        "pendulum" | "Pendulum" => Ok(Arc::new(Pendulum::default())),
        "point_mass" | "PointMass2D" => Ok(Arc::new(PointMass2D::default())),
        "mass_spring_damper" | "MassSpringDamper" => Ok(Arc::new(MassSpringDamper::default())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

pub fn make_env(name: &str) -> Result<Env, EnvError> {
    Ok(Env::new(make_system(name)?))
}

/// Clips each component to `[-bound, bound]`; reports whether anything changed.
pub fn clip_action(a: &[f64], bound: f64) -> (Vec<f64>, bool) {
    let clipped: Vec<f64> = a.iter().map(|x| x.clamp(-bound, bound)).collect();
    let changed = clipped.iter().zip(a).any(|(c, x)| c != x);
    (clipped, changed)
}

/// One environment step, the unit stored in replay buffers and trajectory dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Stateful episode runner around a [`System`].
#[derive(Debug, Clone)]
pub struct Env {
    system: Arc<dyn System>,
    obs: Vec<f64>,
    physical: Vec<f64>,
    steps: usize,
}

impl Env {
    pub fn new(system: Arc<dyn System>) -> Self {
        let obs = vec![0.0; system.spec().obs_dim];
        let physical = system.physical_state(&obs);
        Self {
            system,
            obs,
            physical,
            steps: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        self.system.spec()
    }

    pub fn system(&self) -> &Arc<dyn System> {
        &self.system
    }

    pub fn observation(&self) -> &[f64] {
        &self.obs
    }

    /// Unwrapped physical coordinates (e.g. the pendulum angle without wrapping).
    pub fn physical(&self) -> &[f64] {
        &self.physical
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = self.system.initial_observation(&mut rng);
        self.set_observation(&obs).expect("initial observation has the right size");
        self.obs.clone()
    }

    /// Places the environment at an arbitrary observation with the step counter at 0.
    pub fn set_observation(&mut self, obs: &[f64]) -> Result<(), EnvError> {
        let spec = self.system.spec();
        if obs.len() != spec.obs_dim {
            return Err(EnvError::Dimension {
                expected: spec.obs_dim,
                got: obs.len(),
            });
        }
        self.obs = obs.to_vec();
        self.physical = self.system.physical_state(obs);
        self.steps = 0;
        Ok(())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        let spec = self.system.spec();
        if action.len() != spec.act_dim {
            return Err(EnvError::Dimension {
                expected: spec.act_dim,
                got: action.len(),
            });
        }
        if self.steps >= spec.horizon {
            return Err(EnvError::EpisodeOver);
        }
        let (a, clipped) = clip_action(action, spec.action_bound);
        if clipped {
            log::warn!("{}: action {:?} clipped to bounds ±{}", spec.name, action, spec.action_bound);
        }
        let reward = self.system.true_reward(&self.obs, &a);
        let next = self.system.true_dynamics(&self.obs, &a);
        if !reward.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(EnvError::Fault { step: self.steps });
        }
        self.physical = self.system.advance_physical(&self.physical, &next);
        self.obs = next;
        self.steps += 1;
        Ok(StepOutcome {
            observation: self.obs.clone(),
            reward,
            done: self.steps == spec.horizon,
        })
    }
}
