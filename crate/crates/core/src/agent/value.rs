use rand::Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::models::Mlp;

/// `V_ψ`, its Polyak target `V_ψ̄`, and the twin soft-Q networks `Q_φ0`, `Q_φ1`.
#[derive(Debug, Clone)]
pub struct ValueFunctions {
    pub v: Mlp,
    pub v_target: Mlp,
    pub q: [Mlp; 2],
    /// Target update `ψ̄ ← τ·ψ̄ + (1 − τ)·ψ`.
    pub tau: f64,
}

impl ValueFunctions {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], tau: f64, rng: &mut impl Rng) -> Self {
        let v = Mlp::new(obs_dim, hidden, 1, rng);
        let v_target = v.clone();
        let q = [
            Mlp::new(obs_dim + act_dim, hidden, 1, rng),
            Mlp::new(obs_dim + act_dim, hidden, 1, rng),
        ];
        Self { v, v_target, q, tau }
    }

    pub fn polyak_update(&mut self) -> Result<(), AutodiffError> {
        let tau = self.tau;
        self.v_target.params_mut().polyak_update(self.v.params(), tau)
    }

    /// `Q_i(s, a)` as `[rows, 1]`.
    pub fn q_forward(&self, tape: &mut Tape, i: usize, s: Var, a: Var) -> Result<Var, AutodiffError> {
        let x = tape.concat_cols(&[s, a])?;
        self.q[i].forward(tape, x)
    }
}

/// Forward pass on plain values, without keeping a graph.
pub fn eval_mlp(net: &Mlp, x: &Tensor) -> Result<Vec<f64>, AutodiffError> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = net.forward(&mut tape, xv)?;
    Ok(tape.value(y).data().to_vec())
}
