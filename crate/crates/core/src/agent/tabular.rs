//! Exact-expectation soft policy iteration on finite MDPs, built from the same
//! target functions the function-approximation losses use.

use super::losses::{soft_q_target, soft_v_target};

/// A finite MDP: `p[s][a][s']`, `r[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn states(&self) -> usize {
        self.r.len()
    }

    pub fn actions(&self) -> usize {
        self.r[0].len()
    }

    fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.p[s][a].iter().zip(v).map(|(p, v)| p * v).sum()
    }
}

/// Boltzmann policy `π(a|s) ∝ exp(Q(s,a)/α)` as log-probabilities: the exact
/// minimiser of the policy KL objective for a tabular critic.
pub fn soft_greedy_log_policy(q: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    q.iter()
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m / alpha + row.iter().map(|x| ((x - m) / alpha).exp()).sum::<f64>().ln();
            row.iter().map(|x| x / alpha - lse).collect()
        })
        .collect()
}

/// Iterates `π ← softmax(Q/α)`, `V(s) ← E_π[Q − α log π]`, `Q ← r + γ E_p[V]`
/// until successive `Q`s differ by less than `tol` in sup-norm. Returns `(V, Q)`.
pub fn soft_policy_iteration(mdp: &TabularMdp, alpha: f64, tol: f64, max_iters: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (ns, na) = (mdp.states(), mdp.actions());
    let mut q = vec![vec![0.0; na]; ns];
    let mut v = vec![0.0; ns];
    for _ in 0..max_iters {
        let log_pi = soft_greedy_log_policy(&q, alpha);
        for s in 0..ns {
            v[s] = (0..na)
                .map(|a| log_pi[s][a].exp() * soft_v_target(q[s][a], alpha, log_pi[s][a]))
                .sum();
        }
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let new = soft_q_target(mdp.r[s][a], mdp.gamma, mdp.expected_next(s, a, &v));
                delta = delta.max((new - q[s][a]).abs());
                q[s][a] = new;
            }
        }
        if delta < tol {
            break;
        }
    }
    (v, q)
}
