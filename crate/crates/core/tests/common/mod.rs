//! Gradient-check catalogue, tabular oracles and small agents shared by the
//! integration tests.
#![allow(dead_code)]

use memb::agent::tabular::{soft_policy_iteration, TabularMdp};
use memb::agent::{policy_objective, Agent, AgentConfig, AgentError, Policy, PolicyNoise};
use memb::autodiff::*;
use memb::envs::{make_system, Env};
use memb::models::{standard_normal, RewardMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TRIALS: usize = 100;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Random tensor whose entries stay at least `gap` away from every point in `kinks`.
pub fn rand_away_from(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let x: f64 = rng.random_range(-2.0..2.0);
            if kinks.iter().all(|k| (x - k).abs() > gap) {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Weighted sum so every output element gets a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape, v: Var) -> Result<Var, AutodiffError> {
    let n = tape.value(v).len();
    let shape = tape.shape(v).to_vec();
    let w = tape.input(Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect()).unwrap());
    let p = tape.mul(v, w)?;
    tape.sum(p, None)
}

/// One random gradient-check case: returns the worst relative error.
pub type Case = Box<dyn Fn(&mut ChaCha8Rng) -> f64>;

fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>) -> f64 {
    input_gradient_check(f, inputs, H).unwrap()
}

/// Every differentiable tape op, each wrapped in a random case.
pub fn op_catalogue() -> Vec<(String, Case)> {
    let mut out: Vec<(String, Case)> = Vec::new();
    out.push((
        "matmul".into(),
        Box::new(|rng| {
            check(&[rand_tensor(rng, &[4, 3]), rand_tensor(rng, &[3, 2])], |t, v| {
                let c = t.matmul(v[0], v[1])?;
                weighted_sum(t, c)
            })
        }),
    ));
    for op in [
        Elementwise::Neg,
        Elementwise::Tanh,
        Elementwise::Exp,
        Elementwise::Log,
        Elementwise::Relu,
        Elementwise::Square,
    ] {
        out.push((
            format!("unary {op:?}"),
            Box::new(move |rng| {
                let x = match op {
                    Elementwise::Log => rand_tensor(rng, &[3, 4]).map(|v| v.abs() + 0.1),
                    Elementwise::Relu => rand_away_from(rng, &[3, 4], &[0.0], 1e-3),
                    _ => rand_tensor(rng, &[3, 4]),
                };
                check(&[x], |t, v| {
                    let y = t.elementwise(op, &[v[0]])?;
                    weighted_sum(t, y)
                })
            }),
        ));
    }
    for op in [Elementwise::Add, Elementwise::Mul] {
        for (la, lb) in [(vec![2, 3], vec![2, 3]), (vec![], vec![2, 3]), (vec![2, 3], vec![1])] {
            out.push((
                format!("binary {op:?} {la:?}x{lb:?}"),
                Box::new(move |rng| {
                    check(&[rand_tensor(rng, &la), rand_tensor(rng, &lb)], |t, v| {
                        let y = t.elementwise(op, &[v[0], v[1]])?;
                        weighted_sum(t, y)
                    })
                }),
            ));
        }
    }
    out.push((
        "sub".into(),
        Box::new(|rng| {
            check(&[rand_tensor(rng, &[3, 2]), rand_tensor(rng, &[3, 2])], |t, v| {
                let y = t.sub(v[0], v[1])?;
                let y = t.square(y)?;
                weighted_sum(t, y)
            })
        }),
    ));
    out.push((
        "add_row".into(),
        Box::new(|rng| {
            check(&[rand_tensor(rng, &[4, 3]), rand_tensor(rng, &[1, 3])], |t, v| {
                let y = t.add_row(v[0], v[1])?;
                let y = t.tanh(y)?;
                weighted_sum(t, y)
            })
        }),
    ));
    out.push((
        "concat_cols+slice_cols".into(),
        Box::new(|rng| {
            check(&[rand_tensor(rng, &[3, 2]), rand_tensor(rng, &[3, 3])], |t, v| {
                let c = t.concat_cols(&[v[0], v[1], v[0]])?;
                let s = t.slice_cols(c, 1, 6)?;
                let s = t.square(s)?;
                weighted_sum(t, s)
            })
        }),
    ));
    out.push((
        "reshape".into(),
        Box::new(|rng| {
            check(&[rand_tensor(rng, &[2, 6])], |t, v| {
                let r = t.reshape(v[0], &[3, 4])?;
                let r = t.sum(r, Some(1))?;
                let r = t.tanh(r)?;
                weighted_sum(t, r)
            })
        }),
    ));
    out.push((
        "clamp+scale+offset+col_affine".into(),
        Box::new(|rng| {
            check(&[rand_away_from(rng, &[3, 2], &[-1.0, 1.5], 1e-3)], |t, v| {
                let c = t.clamp(v[0], -1.0, 1.5)?;
                let c = t.scale(c, -2.5)?;
                let c = t.offset(c, 0.7)?;
                let c = t.col_affine(c, &[0.5, 3.0], &[1.0, -1.0])?;
                let c = t.tanh(c)?;
                weighted_sum(t, c)
            })
        }),
    ));
    out.push((
        "row_map_fd".into(),
        Box::new(|rng| {
            check(&[rand_tensor(rng, &[3, 2])], |t, v| {
                let y = t.row_map_fd(v[0], 2, 1e-6, |x| vec![x[0] * x[1], x[0].sin()])?;
                weighted_sum(t, y)
            })
        }),
    ));
    for axis in [None, Some(0), Some(1), Some(2)] {
        for mean in [false, true] {
            out.push((
                format!("{} axis {axis:?}", if mean { "mean" } else { "sum" }),
                Box::new(move |rng| {
                    check(&[rand_tensor(rng, &[2, 3, 4])], |t, v| {
                        let r = if mean { t.mean(v[0], axis)? } else { t.sum(v[0], axis)? };
                        let r = t.tanh(r)?;
                        weighted_sum(t, r)
                    })
                }),
            ));
        }
    }
    out.push((
        "gaussian_reparam".into(),
        Box::new(|rng| {
            let inputs = [rand_tensor(rng, &[2, 3]), rand_tensor(rng, &[2, 3]), rand_tensor(rng, &[2, 3])];
            check(&inputs, |t, v| {
                let y = gaussian_reparam(t, v[0], v[1], v[2])?;
                weighted_sum(t, y)
            })
        }),
    ));
    out.push((
        "gaussian_log_prob".into(),
        Box::new(|rng| {
            let inputs = [rand_tensor(rng, &[2, 3]), rand_tensor(rng, &[2, 3]), rand_tensor(rng, &[2, 3])];
            check(&inputs, |t, v| {
                let y = gaussian_log_prob(t, v[0], v[1], v[2])?;
                weighted_sum(t, y)
            })
        }),
    ));
    out.push((
        "tanh_correction".into(),
        Box::new(|rng| {
            check(&[rand_tensor(rng, &[2]), rand_tensor(rng, &[2, 3])], |t, v| {
                let y = tanh_correction(t, v[0], v[1])?;
                weighted_sum(t, y)
            })
        }),
    ));
    out
}

/// Worst relative error of `case` over [`TRIALS`] random draws.
pub fn worst_over_trials(name: &str, case: &Case) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    (0..TRIALS).map(|_| case(&mut rng)).fold(0.0, f64::max)
}

/// Central-difference check of a scalar function of the parameter set that
/// `params` selects inside `obj`, perturbing that set in place.
pub fn fd_check<T>(
    obj: &mut T,
    params: fn(&mut T) -> &mut ParameterSet,
    f: impl Fn(&T, &mut Tape) -> Result<Var, AgentError>,
) -> f64 {
    params(obj).zero_grad();
    let mut tape = Tape::new();
    let out = f(obj, &mut tape).unwrap();
    tape.backward(out, &mut [params(obj)]).unwrap();
    let set = params(obj);
    let analytic: Vec<Vec<f64>> = (0..set.len()).map(|i| set.grad(i).to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let x0 = params(obj).value(i).data()[j];
            let eval = |x: f64, obj: &mut T| {
                params(obj).value_mut(i)[j] = x;
                let mut tape = Tape::new();
                let out = f(obj, &mut tape).unwrap();
                tape.value(out).item()
            };
            let up = eval(x0 + H, obj);
            let down = eval(x0 - H, obj);
            params(obj).value_mut(i)[j] = x0;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * H)));
        }
    }
    worst
}

pub fn small_cfg() -> AgentConfig {
    AgentConfig {
        policy_hidden: vec![16, 16],
        value_hidden: vec![16, 16],
        batch_size: 32,
        warmup_steps: 100,
        ..AgentConfig::default()
    }
}

/// Pendulum agent after `steps` training iterations with [`small_cfg`].
pub fn trained_agent(seed: u64, steps: usize) -> (Agent, Env) {
    let system = make_system("pendulum").unwrap();
    let mut env = Env::new(system.clone());
    let mut agent = Agent::new(small_cfg(), system, seed).unwrap();
    for _ in 0..steps {
        agent.train_iteration(&mut env).unwrap();
    }
    (agent, env)
}

/// Worst relative error of the policy objective's θ-gradient (through the
/// learned reward, dynamics and V) against central differences.
pub fn full_chain_error(seed: u64) -> f64 {
    let (agent, _) = trained_agent(seed, 150);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = standard_normal(&mut rng, 4, 3);
    let noise = PolicyNoise {
        eta: standard_normal(&mut rng, 4, 1),
        zeta_s: standard_normal(&mut rng, 4, 3),
        zeta_r: standard_normal(&mut rng, 4, 1),
    };
    let mut policy = agent.policy.clone();
    fd_check(&mut policy, Policy::params_mut, |p, t| {
        policy_objective(t, p, agent.model.as_dyn(), &agent.values, &s, &noise, 0.2, 0.99, RewardMode::Sampled)
    })
}

pub fn random_tabular(rng: &mut ChaCha8Rng) -> TabularMdp {
    let ns = rng.random_range(2..=8);
    let na = rng.random_range(2..=4);
    let p = (0..ns)
        .map(|_| {
            (0..na)
                .map(|_| {
                    let w: Vec<f64> = (0..ns).map(|_| rng.random_range(0.0..1.0)).collect();
                    let z: f64 = w.iter().sum();
                    w.iter().map(|x| x / z).collect()
                })
                .collect()
        })
        .collect();
    let r = (0..ns).map(|_| (0..na).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    TabularMdp {
        p,
        r,
        gamma: rng.random_range(0.5..0.95),
    }
}

/// Independent oracle: soft value iteration V ← α·logsumexp((r + γPV)/α).
pub fn soft_value_iteration(mdp: &TabularMdp, alpha: f64) -> Vec<f64> {
    let ns = mdp.r.len();
    let mut v = vec![0.0; ns];
    loop {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let qs: Vec<f64> = (0..mdp.r[s].len())
                .map(|a| mdp.r[s][a] + mdp.gamma * mdp.p[s][a].iter().zip(&v).map(|(p, v)| p * v).sum::<f64>())
                .collect();
            let m = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            next[s] = m + alpha * qs.iter().map(|q| ((q - m) / alpha).exp()).sum::<f64>().ln();
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-13 {
            return v;
        }
    }
}

/// Sup-norm gaps between the agent's soft V/Q iteration and the oracle on
/// `count` random MDPs (≤ 8 states, ≤ 4 actions).
pub fn soft_bellman_gaps(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mdp = random_tabular(&mut rng);
            let alpha = rng.random_range(0.05..1.0);
            let (v, _) = soft_policy_iteration(&mdp, alpha, 1e-12, 100_000);
            let oracle = soft_value_iteration(&mdp, alpha);
            v.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect()
}

/// Random probability vector; each entry is zero with probability `sparsity`.
pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| if rng.random_bool(sparsity) { 0.0 } else { rng.random::<f64>() }).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}
