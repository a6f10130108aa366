use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, System};

/// Planar point mass driven to the origin; observation `(x, y, vx, vy)`.
#[derive(Debug, Clone)]
pub struct PointMass2D {
    spec: EnvSpec,
    /// Positions and velocities are clamped to `[-limit, limit]`.
    pub limit: f64,
}

impl Default for PointMass2D {
    fn default() -> Self {
        let limit = 2.0;
        Self {
            spec: EnvSpec {
                name: "point_mass",
                obs_dim: 4,
                act_dim: 2,
                action_bound: 1.0,
                horizon: 100,
                dt: 0.05,
                reward_bound: 2.0 * limit * limit + 0.02,
            },
            limit,
        }
    }
}

impl System for PointMass2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn true_dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (dt, lim) = (self.spec.dt, self.limit);
        let vx = (s[2] + a[0] * dt).clamp(-lim, lim);
        let vy = (s[3] + a[1] * dt).clamp(-lim, lim);
        vec![(s[0] + vx * dt).clamp(-lim, lim), (s[1] + vy * dt).clamp(-lim, lim), vx, vy]
    }

    fn true_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        -(s[0] * s[0] + s[1] * s[1]) - 0.01 * (a[0] * a[0] + a[1] * a[1])
    }

    fn initial_observation(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), 0.0, 0.0]
    }
}
