use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, Losses};
use crate::envs::{make_system, Env};
use crate::models::{model_error_eval, sample_pairs, Checkpoint};

use super::config::RunConfig;
use super::HarnessError;

pub const CONFIG_FILE: &str = "config.toml";
pub const HASH_FILE: &str = "config.sha256";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Mean-prediction model errors on visited `(s, a)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelErrorRecord {
    pub transition: f64,
    pub reward: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    /// One environment step. `episode_return_mean` is set on steps that end a
    /// training episode; `losses` is absent during warm-up.
    Step {
        step: usize,
        epoch: usize,
        reward: f64,
        episode_return_mean: Option<f64>,
        losses: Option<Losses>,
        model_error: Option<ModelErrorRecord>,
        alpha: f64,
        m: usize,
        k: usize,
        real_size: usize,
        img_size: usize,
        faults: usize,
    },
    /// Deterministic-policy evaluation.
    Eval {
        step: usize,
        epoch: usize,
        episode_return_mean: f64,
        episode_return_std: f64,
        returns: Vec<f64>,
    },
    /// End of an epoch: means over its steps and finished training episodes.
    Epoch {
        step: usize,
        epoch: usize,
        episode_return_mean: Option<f64>,
        episodes: usize,
        losses: Option<Losses>,
        model_error: Option<ModelErrorRecord>,
        alpha: f64,
        m: usize,
        k: usize,
    },
}

/// Handle on a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub config_hash: String,
    /// `(epoch, path)` of every periodic checkpoint written.
    pub checkpoints: Vec<(usize, PathBuf)>,
}

/// What ablations and acceptance checks need from a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config_hash: String,
    /// `(step, mean deterministic return)` at every evaluation point.
    pub evals: Vec<(usize, f64)>,
}

impl RunSummary {
    pub fn final_return(&self) -> Option<f64> {
        self.evals.last().map(|e| e.1)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Evaluation episodes use a fixed seed block disjoint from training resets.
pub fn eval_seed_base(seed: u64) -> u64 {
    (1 << 40) | (seed << 16)
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(io_err(path))
}

#[derive(Default)]
struct LossAccumulator {
    sums: [f64; 6],
    counts: [usize; 6],
}

impl LossAccumulator {
    fn add(&mut self, l: &Losses) {
        let vals = [l.model_dyn, l.model_rew, Some(l.q0), Some(l.q1), Some(l.v), l.policy];
        for (i, v) in vals.into_iter().enumerate() {
            if let Some(v) = v {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
    }

    fn mean(&self) -> Option<Losses> {
        if self.counts[2] == 0 {
            return None;
        }
        let m = |i: usize| (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64);
        Some(Losses {
            model_dyn: m(0),
            model_rew: m(1),
            q0: m(2)?,
            q1: m(3)?,
            v: m(4)?,
            policy: m(5),
        })
    }
}

/// Runs `cfg` into `dir`: persists the config and its hash before the first
/// step, then streams metrics (and optionally trajectories), evaluates every
/// `eval_interval` steps and checkpoints every `checkpoint_every` epochs plus
/// a final checkpoint.
pub fn train(cfg: &RunConfig, dir: &Path) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let system = make_system(&cfg.env)?;
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(io_err(dir))?;
    let config_text = cfg.to_toml()?;
    let config_hash = cfg.hash()?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, &config_text).map_err(io_err(&config_path))?;
    let hash_path = dir.join(HASH_FILE);
    fs::write(&hash_path, format!("{config_hash}\n")).map_err(io_err(&hash_path))?;
    // a stale final checkpoint would mark an interrupted rerun as complete
    let final_path = dir.join(FINAL_CHECKPOINT);
    if final_path.exists() {
        fs::remove_file(&final_path).map_err(io_err(&final_path))?;
    }

    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    let traj_path = dir.join(TRAJECTORIES_FILE);
    let mut trajectories = if cfg.dump_trajectories {
        Some(BufWriter::new(File::create(&traj_path).map_err(io_err(&traj_path))?))
    } else {
        None
    };

    let mut agent = Agent::new(cfg.agent_config(), system.clone(), cfg.seed)?;
    let mut env = Env::new(system.clone());
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0e44_0e44);
    let mut checkpoints = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut losses = LossAccumulator::default();
        let mut returns = Vec::new();
        for _ in 0..cfg.steps_per_epoch {
            let rec = agent.train_iteration(&mut env)?;
            if let Some(l) = &rec.losses {
                losses.add(l);
            }
            if let Some(r) = rec.episode_return {
                returns.push(r);
            }
            if let Some(w) = trajectories.as_mut() {
                let t = agent.real.latest().expect("step pushed a transition");
                write_line(w, t, &traj_path)?;
            }
            write_line(
                &mut metrics,
                &MetricRecord::Step {
                    step: rec.step,
                    epoch,
                    reward: rec.reward,
                    episode_return_mean: rec.episode_return,
                    losses: rec.losses,
                    model_error: None,
                    alpha: cfg.alpha,
                    m: cfg.m,
                    k: cfg.k,
                    real_size: rec.real_size,
                    img_size: rec.img_size,
                    faults: rec.faults,
                },
                &metrics_path,
            )?;
            if rec.step % cfg.eval_interval == 0 {
                let r = agent.evaluate(&system, cfg.eval_episodes, eval_seed_base(cfg.seed))?;
                let (mean, std) = mean_std(&r);
                log::info!("{} seed {} step {}: eval return {mean:.1}", cfg.env, cfg.seed, rec.step);
                write_line(
                    &mut metrics,
                    &MetricRecord::Eval {
                        step: rec.step,
                        epoch,
                        episode_return_mean: mean,
                        episode_return_std: std,
                        returns: r,
                    },
                    &metrics_path,
                )?;
            }
        }

        let pairs = sample_pairs(agent.real.items(), cfg.model_error_samples, &mut pair_rng);
        let model_error = if pairs.is_empty() {
            None
        } else {
            let (transition, reward) = model_error_eval(agent.model.as_dyn(), system.as_ref(), &pairs)?;
            Some(ModelErrorRecord { transition, reward })
        };
        write_line(
            &mut metrics,
            &MetricRecord::Epoch {
                step: agent.steps(),
                epoch,
                episode_return_mean: (!returns.is_empty()).then(|| mean_std(&returns).0),
                episodes: returns.len(),
                losses: losses.mean(),
                model_error,
                alpha: cfg.alpha,
                m: cfg.m,
                k: cfg.k,
            },
            &metrics_path,
        )?;
        metrics.flush().map_err(io_err(&metrics_path))?;
        if let Some(w) = trajectories.as_mut() {
            w.flush().map_err(io_err(&traj_path))?;
        }
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            let path = checkpoint_path(dir, epoch);
            Checkpoint {
                sections: agent.checkpoint_sections(),
            }
            .save(&path)?;
            checkpoints.push((epoch, path));
        }
    }
    metrics.flush().map_err(io_err(&metrics_path))?;
    if let Some(mut w) = trajectories {
        w.flush().map_err(io_err(&traj_path))?;
    }
    Checkpoint {
        sections: agent.checkpoint_sections(),
    }
    .save(&final_path)?;
    Ok(RunRecord {
        dir: dir.to_path_buf(),
        config_hash,
        checkpoints,
    })
}

/// Parses every line of a metrics file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if !line.is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Summary of a finished run directory.
pub fn load_summary(dir: &Path) -> Result<RunSummary, HarnessError> {
    let hash_path = dir.join(HASH_FILE);
    let config_hash = fs::read_to_string(&hash_path).map_err(io_err(&hash_path))?.trim().to_string();
    let evals = read_metrics(&dir.join(METRICS_FILE))?
        .into_iter()
        .filter_map(|r| match r {
            MetricRecord::Eval {
                step, episode_return_mean, ..
            } => Some((step, episode_return_mean)),
            _ => None,
        })
        .collect();
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        config_hash,
        evals,
    })
}

/// Trains `cfg` under `root/<run name>` unless that directory already holds a
/// finished run of the identical config, in which case it is reused.
pub fn train_or_reuse(cfg: &RunConfig, root: &Path) -> Result<RunSummary, HarnessError> {
    let dir = root.join(cfg.run_name()?);
    let finished = dir.join(FINAL_CHECKPOINT).exists()
        && fs::read_to_string(dir.join(CONFIG_FILE)).ok().as_deref() == Some(cfg.to_toml()?.as_str());
    if finished {
        log::info!("reusing finished run {}", dir.display());
    } else {
        train(cfg, &dir)?;
    }
    load_summary(&dir)
}
