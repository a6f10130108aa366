use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, System};

/// Torque-limited pendulum swing-up; observation `(cos θ, sin θ, θ̇)`, θ = 0 upright.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    pub g: f64,
    pub mass: f64,
    pub length: f64,
    pub max_speed: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        let (g, max_speed) = (10.0, 8.0);
        let max_torque = 2.0;
        Self {
            spec: EnvSpec {
                name: "pendulum",
                obs_dim: 3,
                act_dim: 1,
                action_bound: max_torque,
                horizon: 200,
                dt: 0.05,
                reward_bound: PI * PI + 0.1 * max_speed * max_speed + 0.001 * max_torque * max_torque,
            },
            g,
            mass: 1.0,
            length: 1.0,
            max_speed,
        }
    }
}

impl Pendulum {
    pub fn angle(s: &[f64]) -> f64 {
        s[1].atan2(s[0])
    }

    /// `(θ', θ̇')` from `(θ, θ̇, u)` by semi-implicit Euler.
    pub fn integrate(&self, theta: f64, theta_dot: f64, u: f64) -> (f64, f64) {
        let (g, m, l, dt) = (self.g, self.mass, self.length, self.spec.dt);
        let acc = 3.0 * g / (2.0 * l) * theta.sin() + 3.0 / (m * l * l) * u;
        let theta_dot = (theta_dot + acc * dt).clamp(-self.max_speed, self.max_speed);
        (theta + theta_dot * dt, theta_dot)
    }
}

impl System for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn true_dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (theta, theta_dot) = self.integrate(Self::angle(s), s[2], a[0]);
        vec![theta.cos(), theta.sin(), theta_dot]
    }

    fn true_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        // atan2 already yields the normalised angle in [-π, π]
        let theta = Self::angle(s);
        -(theta * theta + 0.1 * s[2] * s[2] + 0.001 * a[0] * a[0])
    }

    fn initial_observation(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let theta: f64 = rng.random_range(-PI..=PI);
        let theta_dot: f64 = rng.random_range(-1.0..=1.0);
        vec![theta.cos(), theta.sin(), theta_dot]
    }

    fn physical_state(&self, s: &[f64]) -> Vec<f64> {
        vec![Self::angle(s), s[2]]
    }

    fn advance_physical(&self, prev: &[f64], next_obs: &[f64]) -> Vec<f64> {
        vec![prev[0] + next_obs[2] * self.spec.dt, next_obs[2]]
    }
}
