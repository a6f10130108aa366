use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AutodiffError, Tape, Tensor};
use crate::envs::{Env, EnvSpec, System, Transition};
use crate::models::{standard_normal, LearnedModel, ModelConfig, ModelError, NetSection, RewardMode, TrueModel, WorldModel};

use super::buffer::ReplayBuffer;
use super::losses::{policy_objective, q_loss, q_targets, v_loss, value_expansion_loss, ExpansionBatch, PolicyNoise};
use super::policy::Policy;
use super::value::ValueFunctions;
use super::{AgentConfig, AgentError, PolicyData, QSource};

/// Inferred model noise is clipped to this many standard deviations.
const MAX_INFERRED_NOISE: f64 = 5.0;

#[derive(Debug, Clone)]
pub enum WorldModelKind {
    Learned(LearnedModel),
    True(TrueModel),
}

impl WorldModelKind {
    pub fn as_dyn(&self) -> &dyn WorldModel {
        match self {
            Self::Learned(m) => m,
            Self::True(m) => m,
        }
    }

    pub fn learned(&self) -> Option<&LearnedModel> {
        match self {
            Self::Learned(m) => Some(m),
            Self::True(_) => None,
        }
    }
}

/// Per-step losses; model losses are absent for the true-model plug-in and
/// actor-critic losses are means over the `m` repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub model_dyn: Option<f64>,
    pub model_rew: Option<f64>,
    pub q0: f64,
    pub q1: f64,
    pub v: f64,
    pub policy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub step: usize,
    pub reward: f64,
    /// Return of the training episode that finished on this step.
    pub episode_return: Option<f64>,
    /// `None` during warm-up.
    pub losses: Option<Losses>,
    pub real_size: usize,
    pub img_size: usize,
    pub faults: usize,
}

fn rows_of<'a>(ts: impl Iterator<Item = &'a [f64]>) -> Result<Tensor, AutodiffError> {
    let rows: Vec<&[f64]> = ts.collect();
    Tensor::from_rows(&rows)
}

fn is_numeric_fault(e: &AgentError) -> bool {
    matches!(
        e,
        AgentError::Autodiff(AutodiffError::NonFinite { .. }) | AgentError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
    )
}

/// Algorithm-1 learner. Owns the networks, both replay buffers and the episode
/// bookkeeping of the environment it trains on.
#[derive(Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    spec: EnvSpec,
    pub policy: Policy,
    pub values: ValueFunctions,
    pub model: WorldModelKind,
    pub real: ReplayBuffer,
    pub imaginary: ReplayBuffer,
    rng: ChaCha8Rng,
    seed: u64,
    obs: Option<Vec<f64>>,
    episode_return: f64,
    episodes: usize,
    steps: usize,
    faults: usize,
}

impl Agent {
    pub fn new(cfg: AgentConfig, system: Arc<dyn System>, seed: u64) -> Result<Self, AgentError> {
        cfg.validate()?;
        let spec = system.spec().clone();
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let policy = Policy::new(spec.obs_dim, spec.act_dim, &cfg.policy_hidden, spec.action_bound, &mut init);
        let values = ValueFunctions::new(spec.obs_dim, spec.act_dim, &cfg.value_hidden, cfg.tau, &mut init);
        let model = if cfg.true_model {
            WorldModelKind::True(TrueModel::new(system))
        } else {
            let mcfg = ModelConfig {
                hidden: cfg.model_hidden.clone(),
                init_log_std: cfg.model_init_log_std,
                adam: AdamConfig::with_lr(cfg.model_lr),
            };
            WorldModelKind::Learned(LearnedModel::new(spec.obs_dim, spec.act_dim, &mcfg, &mut init))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            real: ReplayBuffer::new(cfg.buffer_capacity, seed ^ 0x5eed_0001),
            imaginary: ReplayBuffer::new(cfg.batch_size * cfg.k.max(cfg.horizon), seed ^ 0x5eed_0002),
            cfg,
            spec,
            policy,
            values,
            model,
            rng,
            seed,
            obs: None,
            episode_return: 0.0,
            episodes: 0,
            steps: 0,
            faults: 0,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn faults(&self) -> usize {
        self.faults
    }

    /// Reset seed of training episode `i`.
    pub fn episode_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
    }

    pub fn checkpoint_sections(&self) -> Vec<NetSection> {
        let mut out = vec![
            NetSection::from_gaussian("policy", self.policy.net()),
            NetSection::from_mlp("v", &self.values.v),
            NetSection::from_mlp("v_target", &self.values.v_target),
            NetSection::from_mlp("q0", &self.values.q[0]),
            NetSection::from_mlp("q1", &self.values.q[1]),
        ];
        if let Some(m) = self.model.learned() {
            out.extend(m.checkpoint_sections());
        }
        out
    }

    /// Algorithm 1, one environment step: model training, interaction, then `m`
    /// actor-critic repetitions. Warm-up steps only interact, with uniform actions.
    pub fn train_iteration(&mut self, env: &mut Env) -> Result<IterationRecord, AgentError> {
        let warm = self.steps >= self.cfg.warmup_steps;
        let model_losses = if warm { self.train_model()? } else { None };

        let obs = match self.obs.take() {
            Some(o) => o,
            None => env.reset(self.episode_seed(self.episodes)),
        };
        let action = if warm {
            let mut rng = &mut self.rng;
            self.policy.act_rows(&[&obs], Some(&mut rng as &mut dyn rand::RngCore))?.remove(0)
        } else {
            let b = self.spec.action_bound;
            (0..self.spec.act_dim).map(|_| self.rng.random_range(-b..b)).collect()
        };
        let out = env.step(&action)?;
        let t = Transition {
            s: obs,
            a: action,
            r: out.reward,
            s_next: out.observation.clone(),
            done: out.done,
            step: env.steps() - 1,
        };
        if let WorldModelKind::Learned(m) = &mut self.model {
            m.observe(&t);
        }
        self.real.push(t);
        self.episode_return += out.reward;
        let episode_return = if out.done {
            self.episodes += 1;
            self.obs = None;
            Some(std::mem::take(&mut self.episode_return))
        } else {
            self.obs = Some(out.observation);
            None
        };

        let losses = if warm {
            let mut acc = [0.0; 3];
            let mut pol = (0.0, 0usize);
            for _ in 0..self.cfg.m {
                let (q0, q1, v, p) = self.actor_critic()?;
                acc[0] += q0;
                acc[1] += q1;
                acc[2] += v;
                if let Some(p) = p {
                    pol.0 += p;
                    pol.1 += 1;
                }
            }
            let m = self.cfg.m as f64;
            Some(Losses {
                model_dyn: model_losses.map(|l| l.0),
                model_rew: model_losses.map(|l| l.1),
                q0: acc[0] / m,
                q1: acc[1] / m,
                v: acc[2] / m,
                policy: (pol.1 > 0).then(|| pol.0 / pol.1 as f64),
            })
        } else {
            None
        };
        self.steps += 1;
        Ok(IterationRecord {
            step: self.steps,
            reward: out.reward,
            episode_return,
            losses,
            real_size: self.real.len(),
            img_size: self.imaginary.len(),
            faults: self.faults,
        })
    }

    /// One model-regression step on a real batch; `None` for the true model.
    pub fn train_model(&mut self) -> Result<Option<(f64, f64)>, AgentError> {
        let WorldModelKind::Learned(model) = &mut self.model else {
            return Ok(None);
        };
        let batch = self.real.sample(self.cfg.batch_size);
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let adam = AdamConfig::with_lr(self.cfg.model_lr);
        Ok(Some(model.train_step(&batch, &adam, &mut self.rng)?))
    }

    /// One actor-critic repetition; returns `(q0, q1, v, policy)` losses.
    pub fn actor_critic(&mut self) -> Result<(f64, f64, f64, Option<f64>), AgentError> {
        self.imaginary.clear();
        let batch: Vec<Transition> = self.real.sample(self.cfg.batch_size).into_iter().cloned().collect();
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let needs_rollout = self.cfg.q_source == QSource::Imaginary || self.cfg.policy_data == PolicyData::Imaginary;
        if needs_rollout {
            for t in self.imaginary_rollout(&batch, self.cfg.k) {
                self.imaginary.push(t);
            }
        }

        let (q0, q1) = match self.cfg.q_source {
            QSource::Real => self.update_q_on(&batch)?,
            QSource::Imaginary => {
                let img: Vec<Transition> = self.imaginary.sample(self.cfg.batch_size).into_iter().cloned().collect();
                if img.is_empty() {
                    self.update_q_on(&batch)?
                } else {
                    self.update_q_on(&img)?
                }
            }
            QSource::Expansion => {
                let eb = self.expansion_batch(&batch, self.cfg.horizon)?;
                self.update_q_expansion(&eb)?
            }
        };

        let states = rows_of(batch.iter().map(|t| t.s.as_slice()))?;
        let v = self.update_v(&states)?;

        let policy_loss = match self.cfg.policy_data {
            PolicyData::Imaginary => {
                let starts: Vec<Vec<f64>> = self.imaginary.sample(self.cfg.batch_size).into_iter().map(|t| t.s.clone()).collect();
                if starts.is_empty() {
                    None
                } else {
                    let s = rows_of(starts.iter().map(Vec::as_slice))?;
                    let noise = self.fresh_noise(s.rows());
                    self.policy_gradient_step(&s, &noise)?
                }
            }
            PolicyData::Real => {
                let noise = self.inferred_noise(&batch)?;
                self.policy_gradient_step(&states, &noise)?
            }
        };
        self.values.polyak_update()?;
        Ok((q0, q1, v, policy_loss))
    }

    fn fresh_noise(&mut self, rows: usize) -> PolicyNoise {
        PolicyNoise {
            eta: standard_normal(&mut self.rng, rows, self.spec.act_dim),
            zeta_s: standard_normal(&mut self.rng, rows, self.spec.obs_dim),
            zeta_r: standard_normal(&mut self.rng, rows, 1),
        }
    }

    /// Model noise that reproduces each real transition under the learned model
    /// (`ζ = (observed − s − μ)/σ`, clipped); fresh policy noise.
    fn inferred_noise(&mut self, batch: &[Transition]) -> Result<PolicyNoise, AgentError> {
        let n = batch.len();
        let eta = standard_normal(&mut self.rng, n, self.spec.act_dim);
        let WorldModelKind::Learned(model) = &self.model else {
            return Ok(PolicyNoise {
                eta,
                zeta_s: Tensor::zeros(&[n, self.spec.obs_dim]),
                zeta_r: Tensor::zeros(&[n, 1]),
            });
        };
        let mut tape = Tape::new();
        let s = tape.input(rows_of(batch.iter().map(|t| t.s.as_slice()))?);
        let a = tape.input(rows_of(batch.iter().map(|t| t.a.as_slice()))?);
        let (mu, ls) = model.dynamics.delta_distribution(&mut tape, s, a)?;
        let x = tape.concat_cols(&[s, a])?;
        let (mu_r, ls_r) = model.reward.net().forward(&mut tape, x)?;
        let infer = |obs: f64, base: f64, mu: f64, ls: f64| ((obs - base - mu) / ls.exp()).clamp(-MAX_INFERRED_NOISE, MAX_INFERRED_NOISE);
        let ds = self.spec.obs_dim;
        let (mu, ls, mu_r, ls_r) = (tape.value(mu), tape.value(ls), tape.value(mu_r), tape.value(ls_r));
        let mut zs = Vec::with_capacity(n * ds);
        let mut zr = Vec::with_capacity(n);
        for (i, t) in batch.iter().enumerate() {
            for d in 0..ds {
                zs.push(infer(t.s_next[d], t.s[d], mu.row(i)[d], ls.row(i)[d]));
            }
            zr.push(infer(t.r, 0.0, mu_r.row(i)[0], ls_r.row(i)[0]));
        }
        Ok(PolicyNoise {
            eta,
            zeta_s: Tensor::matrix(n, ds, zs)?,
            zeta_r: Tensor::matrix(n, 1, zr)?,
        })
    }

    fn reward_noise(&mut self, rows: usize) -> Tensor {
        match self.cfg.reward_mode {
            RewardMode::Sampled => standard_normal(&mut self.rng, rows, 1),
            RewardMode::Mean => Tensor::zeros(&[rows, 1]),
        }
    }

    /// Rolls each start state `k` steps through the current policy and the world
    /// model. A numeric fault truncates the rollout (and is counted).
    pub fn imaginary_rollout(&mut self, starts: &[Transition], k: usize) -> Vec<Transition> {
        let mut out = Vec::with_capacity(starts.len() * k);
        let Ok(mut s) = rows_of(starts.iter().map(|t| t.s.as_slice())) else {
            return out;
        };
        for step in 0..k {
            match self.model_step(&s) {
                Ok((a, r, s_next)) => {
                    for i in 0..s.rows() {
                        out.push(Transition {
                            s: s.row(i).to_vec(),
                            a: a.row(i).to_vec(),
                            r: r.data()[i],
                            s_next: s_next.row(i).to_vec(),
                            done: false,
                            step,
                        });
                    }
                    s = s_next;
                }
                Err(e) => {
                    self.faults += 1;
                    log::warn!("imaginary rollout truncated at step {step}: {e}");
                    break;
                }
            }
        }
        out
    }

    /// `(a ~ π(s), r̂(s, a, ζ_φ), f(s, a, ζ_ω))` for a batch of states.
    fn model_step(&mut self, s: &Tensor) -> Result<(Tensor, Tensor, Tensor), AgentError> {
        let n = s.rows();
        let eta = standard_normal(&mut self.rng, n, self.spec.act_dim);
        let zs = standard_normal(&mut self.rng, n, self.spec.obs_dim);
        let zr = self.reward_noise(n);
        let mut tape = Tape::new();
        let sv = tape.input(s.clone());
        let ev = tape.input(eta);
        let (a, _) = self.policy.sample(&mut tape, sv, ev)?;
        let zs = tape.input(zs);
        let zr = tape.input(zr);
        let model = self.model.as_dyn();
        let r = model.reward(&mut tape, sv, a, zr)?;
        let s_next = model.next_state(&mut tape, sv, a, zs)?;
        Ok((tape.value(a).clone(), tape.value(r).clone(), tape.value(s_next).clone()))
    }

    /// Real first step followed by `horizon − 1` model steps.
    pub fn expansion_batch(&mut self, batch: &[Transition], horizon: usize) -> Result<ExpansionBatch, AgentError> {
        if horizon == 0 {
            return Err(AgentError::InvalidHorizon(0));
        }
        let mut states = vec![rows_of(batch.iter().map(|t| t.s.as_slice()))?];
        let mut actions = vec![rows_of(batch.iter().map(|t| t.a.as_slice()))?];
        let mut rewards = vec![batch.iter().map(|t| t.r).collect::<Vec<_>>()];
        states.push(rows_of(batch.iter().map(|t| t.s_next.as_slice()))?);
        for _ in 1..horizon {
            let (a, r, s_next) = self.model_step(states.last().expect("non-empty"))?;
            actions.push(a);
            rewards.push(r.into_data());
            states.push(s_next);
        }
        Ok(ExpansionBatch { states, actions, rewards })
    }

    /// Regresses both twins on the one-step soft-Q targets of `data`.
    pub fn update_q_on(&mut self, data: &[Transition]) -> Result<(f64, f64), AgentError> {
        let s = rows_of(data.iter().map(|t| t.s.as_slice()))?;
        let a = rows_of(data.iter().map(|t| t.a.as_slice()))?;
        let s_next = rows_of(data.iter().map(|t| t.s_next.as_slice()))?;
        let r: Vec<f64> = data.iter().map(|t| t.r).collect();
        let targets = q_targets(&self.values, &r, &s_next, self.cfg.gamma)?;
        let lr = AdamConfig::with_lr(self.cfg.value_lr);
        let mut out = [0.0; 2];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut tape = Tape::new();
            let loss = q_loss(&mut tape, &self.values, i, &s, &a, &targets)?;
            let p = self.values.q[i].params_mut();
            p.zero_grad();
            tape.backward(loss, &mut [p])?;
            p.adam_step(&lr);
            *slot = tape.value(loss).item();
        }
        Ok((out[0], out[1]))
    }

    pub fn update_q_expansion(&mut self, batch: &ExpansionBatch) -> Result<(f64, f64), AgentError> {
        let lr = AdamConfig::with_lr(self.cfg.value_lr);
        let mut out = [0.0; 2];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut tape = Tape::new();
            let loss = value_expansion_loss(&mut tape, &self.values, i, batch, self.cfg.gamma)?;
            let p = self.values.q[i].params_mut();
            p.zero_grad();
            tape.backward(loss, &mut [p])?;
            p.adam_step(&lr);
            *slot = tape.value(loss).item();
        }
        Ok((out[0], out[1]))
    }

    pub fn update_v(&mut self, states: &Tensor) -> Result<f64, AgentError> {
        let eta = standard_normal(&mut self.rng, states.rows(), self.spec.act_dim);
        let mut tape = Tape::new();
        let loss = v_loss(&mut tape, &self.values, &self.policy, states, &eta, self.cfg.alpha)?;
        let p = self.values.v.params_mut();
        p.zero_grad();
        tape.backward(loss, &mut [p])?;
        p.adam_step(&AdamConfig::with_lr(self.cfg.value_lr));
        Ok(tape.value(loss).item())
    }

    /// One Adam ascent step on the model-embedded objective; only θ changes.
    /// Returns the negated objective, or `None` if the chain hit a numeric fault.
    pub fn policy_gradient_step(&mut self, states: &Tensor, noise: &PolicyNoise) -> Result<Option<f64>, AgentError> {
        let mut tape = Tape::new();
        let built = policy_objective(
            &mut tape,
            &self.policy,
            self.model.as_dyn(),
            &self.values,
            states,
            noise,
            self.cfg.alpha,
            self.cfg.gamma,
            self.cfg.reward_mode,
        )
        .and_then(|obj| Ok(tape.scale(obj, -1.0)?));
        let loss = match built {
            Ok(l) => l,
            Err(e) if is_numeric_fault(&e) => {
                self.faults += 1;
                log::warn!("policy step aborted: {e}");
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let p = self.policy.params_mut();
        p.zero_grad();
        tape.backward(loss, &mut [p])?;
        p.adam_step(&AdamConfig::with_lr(self.cfg.policy_lr));
        Ok(Some(tape.value(loss).item()))
    }

    /// Deterministic-policy returns of `episodes` parallel episodes whose reset
    /// seeds are `seed_base + i`.
    pub fn evaluate(&self, system: &Arc<dyn System>, episodes: usize, seed_base: u64) -> Result<Vec<f64>, AgentError> {
        evaluate_policy(&self.policy, system, episodes, seed_base)
    }
}

/// Runs `episodes` deterministic episodes in lockstep, batching the policy.
pub fn evaluate_policy(policy: &Policy, system: &Arc<dyn System>, episodes: usize, seed_base: u64) -> Result<Vec<f64>, AgentError> {
    let mut envs: Vec<Env> = (0..episodes).map(|_| Env::new(system.clone())).collect();
    let mut obs: Vec<Vec<f64>> = envs.iter_mut().enumerate().map(|(i, e)| e.reset(seed_base + i as u64)).collect();
    let mut returns = vec![0.0; episodes];
    for _ in 0..system.spec().horizon {
        let rows: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
        let actions = policy.act_rows(&rows, None)?;
        for (i, env) in envs.iter_mut().enumerate() {
            let out = env.step(&actions[i])?;
            returns[i] += out.reward;
            obs[i] = out.observation;
        }
    }
    Ok(returns)
}
