use super::{AutodiffError, Tape, Var};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Floor inside the tanh log-density correction.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// `mu + exp(log_std)·noise`.
pub fn gaussian_reparam(tape: &mut Tape, mu: Var, log_std: Var, noise: Var) -> Result<Var, AutodiffError> {
    check_same(tape, "gaussian_reparam", mu, log_std)?;
    check_same(tape, "gaussian_reparam", mu, noise)?;
    let std = tape.exp(log_std)?;
    let scaled = tape.mul(std, noise)?;
    tape.add(mu, scaled)
}

/// Diagonal Gaussian log-density, summed over the last axis (one value per row).
pub fn gaussian_log_prob(tape: &mut Tape, mu: Var, log_std: Var, x: Var) -> Result<Var, AutodiffError> {
    check_same(tape, "gaussian_log_prob", mu, log_std)?;
    check_same(tape, "gaussian_log_prob", mu, x)?;
    let diff = tape.sub(x, mu)?;
    let neg_log_std = tape.neg(log_std)?;
    let inv_std = tape.exp(neg_log_std)?;
    let z = tape.mul(diff, inv_std)?;
    let z2 = tape.square(z)?;
    let quad = tape.scale(z2, -0.5)?;
    let per_dim = tape.sub(quad, log_std)?;
    let per_dim = tape.offset(per_dim, -HALF_LOG_2PI)?;
    reduce_last(tape, per_dim)
}

/// `logp − Σ log(1 − tanh(u)² + ε)` for a tanh-squashed sample with pre-squash value `u`.
pub fn tanh_correction(tape: &mut Tape, logp: Var, u: Var) -> Result<Var, AutodiffError> {
    let t = tape.tanh(u)?;
    let t2 = tape.square(t)?;
    let one_minus = tape.scale(t2, -1.0)?;
    let inner = tape.offset(one_minus, 1.0 + TANH_EPS)?;
    let log_det = tape.log(inner)?;
    let total = reduce_last(tape, log_det)?;
    tape.sub(logp, total)
}

fn reduce_last(tape: &mut Tape, v: Var) -> Result<Var, AutodiffError> {
    let rank = tape.shape(v).len();
    if rank == 0 {
        Ok(v)
    } else {
        tape.sum(v, Some(rank - 1))
    }
}

fn check_same(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
    if tape.shape(a) != tape.shape(b) {
        return Err(AutodiffError::Shape {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}
