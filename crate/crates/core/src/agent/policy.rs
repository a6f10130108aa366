use rand::Rng;

use crate::autodiff::{gaussian_log_prob, gaussian_reparam, tanh_correction, AutodiffError, ParameterSet, Tape, Tensor, Var};
use crate::models::{standard_normal, GaussianNet};

/// Tanh-squashed Gaussian policy `a = bound·tanh(μ_θ(s) + σ_θ(s)·η)`.
#[derive(Debug, Clone)]
pub struct Policy {
    net: GaussianNet,
    act_dim: usize,
    bound: f64,
}

impl Policy {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        Self {
            net: GaussianNet::new(obs_dim, hidden, act_dim, false, rng),
            act_dim,
            bound,
        }
    }

    pub fn from_net(net: GaussianNet, bound: f64) -> Self {
        let act_dim = net.out_dim();
        Self { net, act_dim, bound }
    }

    pub fn net(&self) -> &GaussianNet {
        &self.net
    }

    pub fn params(&self) -> &ParameterSet {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        self.net.params_mut()
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Reparameterised sample for `[rows, obs]` states and `[rows, act]` noise.
    /// Returns `(a, log π(a|s))` with `log π` shaped `[rows, 1]`, including the
    /// tanh correction and the `−log(bound)` per dimension of the scaling.
    pub fn sample(&self, tape: &mut Tape, s: Var, eta: Var) -> Result<(Var, Var), AutodiffError> {
        let (mu, log_std) = self.net.forward(tape, s)?;
        let u = gaussian_reparam(tape, mu, log_std, eta)?;
        let logp = gaussian_log_prob(tape, mu, log_std, u)?;
        let logp = tanh_correction(tape, logp, u)?;
        let logp = tape.offset(logp, -(self.act_dim as f64) * self.bound.ln())?;
        let rows = tape.value(s).rows();
        let logp = tape.reshape(logp, &[rows, 1])?;
        let squashed = tape.tanh(u)?;
        let a = tape.scale(squashed, self.bound)?;
        Ok((a, logp))
    }

    /// `bound·tanh(μ_θ(s))`.
    pub fn deterministic(&self, tape: &mut Tape, s: Var) -> Result<Var, AutodiffError> {
        let (mu, _) = self.net.forward(tape, s)?;
        let squashed = tape.tanh(mu)?;
        tape.scale(squashed, self.bound)
    }

    /// Actions for a batch of plain state rows; stochastic when `rng` is given.
    pub fn act_rows(&self, states: &[&[f64]], rng: Option<&mut dyn rand::RngCore>) -> Result<Vec<Vec<f64>>, AutodiffError> {
        let mut tape = Tape::new();
        let s = tape.input(Tensor::from_rows(states)?);
        let a = match rng {
            Some(mut rng) => {
                let eta = tape.input(standard_normal(&mut rng, states.len(), self.act_dim));
                self.sample(&mut tape, s, eta)?.0
            }
            None => self.deterministic(&mut tape, s)?,
        };
        Ok(tape.value(a).to_rows())
    }
}
