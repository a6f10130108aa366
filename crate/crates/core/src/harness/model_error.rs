use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{make_system, Transition};
use crate::models::{model_error_eval, sample_pairs, Checkpoint, LearnedModel, TrueModel};

use super::config::RunConfig;
use super::run::{CHECKPOINT_DIR, CONFIG_FILE, TRAJECTORIES_FILE};
use super::HarnessError;

/// `(epoch, transition_error, reward_error)`, averaged over runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelErrorRow {
    pub epoch: usize,
    pub transition_error: f64,
    pub reward_error: f64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// `dir` itself when it is a run directory, otherwise its run subdirectories
/// (one per seed), sorted by name.
pub fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if dir.join(CONFIG_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CONFIG_FILE).is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(HarnessError::MissingRun(dir.to_path_buf()));
    }
    Ok(out)
}

/// Periodic checkpoints `(epoch, path)` of a run, in epoch order.
pub fn list_checkpoints(run: &Path) -> Result<Vec<(usize, PathBuf)>, HarnessError> {
    let ckpt_dir = run.join(CHECKPOINT_DIR);
    let mut out: Vec<(usize, PathBuf)> = match fs::read_dir(&ckpt_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| {
                let stem = p.file_name()?.to_str()?.strip_prefix("epoch_")?.strip_suffix(".ckpt")?;
                Some((stem.parse().ok()?, p))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    out.sort();
    if out.is_empty() {
        return Err(HarnessError::MissingCheckpoints(run.to_path_buf()));
    }
    Ok(out)
}

fn read_transitions(path: &Path) -> Result<Vec<Transition>, HarnessError> {
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

/// Re-evaluates every periodic checkpoint of one run on a fixed set of `(s, a)`
/// pairs drawn from the run's own trajectory dump.
pub fn run_model_errors(run: &Path) -> Result<Vec<ModelErrorRow>, HarnessError> {
    let cfg_path = run.join(CONFIG_FILE);
    let cfg = RunConfig::from_toml(&fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?)?;
    let system = make_system(&cfg.env)?;
    let checkpoints = list_checkpoints(run)?;
    let visited = read_transitions(&run.join(TRAJECTORIES_FILE))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs = sample_pairs(&visited, cfg.model_error_samples, &mut rng);
    let mut rows = Vec::new();
    for (epoch, path) in checkpoints {
        let (transition_error, reward_error) = if pairs.is_empty() {
            (0.0, 0.0)
        } else if cfg.true_model {
            model_error_eval(&TrueModel::new(system.clone()), system.as_ref(), &pairs)?
        } else {
            let model = LearnedModel::from_checkpoint(&Checkpoint::load(&path)?, system.spec().act_dim)?;
            model_error_eval(&model, system.as_ref(), &pairs)?
        };
        rows.push(ModelErrorRow {
            epoch,
            transition_error,
            reward_error,
        });
    }
    Ok(rows)
}

/// Per-epoch model errors averaged over the runs found under `dir`; only
/// epochs checkpointed by every run are reported.
pub fn model_errors(dir: &Path) -> Result<Vec<ModelErrorRow>, HarnessError> {
    let runs = run_dirs(dir)?;
    let mut by_epoch: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for run in &runs {
        for row in run_model_errors(run)? {
            by_epoch.entry(row.epoch).or_default().push((row.transition_error, row.reward_error));
        }
    }
    Ok(by_epoch
        .into_iter()
        .filter(|(_, v)| v.len() == runs.len())
        .map(|(epoch, v)| {
            let n = v.len() as f64;
            ModelErrorRow {
                epoch,
                transition_error: v.iter().map(|x| x.0).sum::<f64>() / n,
                reward_error: v.iter().map(|x| x.1).sum::<f64>() / n,
            }
        })
        .collect())
}

pub fn model_error_csv(rows: &[ModelErrorRow]) -> String {
    let mut out = String::from("epoch,transition_error,reward_error\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.transition_error, r.reward_error);
    }
    out
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]) - 0.866_025_403_784_438_6).abs() < 1e-12);
    }
}
