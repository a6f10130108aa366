use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, System};

/// Forced 1-D mass-spring-damper regulated to rest; observation `(x, v)`.
#[derive(Debug, Clone)]
pub struct MassSpringDamper {
    spec: EnvSpec,
    pub mass: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub limit: f64,
}

impl Default for MassSpringDamper {
    fn default() -> Self {
        Self::with_damping(0.1)
    }
}

impl MassSpringDamper {
    pub fn with_damping(damping: f64) -> Self {
        let limit = 5.0;
        Self {
            spec: EnvSpec {
                name: "mass_spring_damper",
                obs_dim: 2,
                act_dim: 1,
                action_bound: 1.0,
                horizon: 200,
                dt: 0.005,
                reward_bound: 1.1 * limit * limit + 0.001,
            },
            mass: 1.0,
            stiffness: 1.0,
            damping,
            limit,
        }
    }

    pub fn energy(&self, s: &[f64]) -> f64 {
        0.5 * self.mass * s[1] * s[1] + 0.5 * self.stiffness * s[0] * s[0]
    }
}

impl System for MassSpringDamper {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn true_dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (dt, lim) = (self.spec.dt, self.limit);
        let acc = (a[0] - self.stiffness * s[0] - self.damping * s[1]) / self.mass;
        let v = (s[1] + acc * dt).clamp(-lim, lim);
        vec![(s[0] + v * dt).clamp(-lim, lim), v]
    }

    fn true_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        -(s[0] * s[0] + 0.1 * s[1] * s[1] + 0.001 * a[0] * a[0])
    }

    fn initial_observation(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-1.0..=1.0), rng.random_range(-0.5..=0.5)]
    }
}
