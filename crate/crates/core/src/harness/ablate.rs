use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::agent::{PolicyData, QSource};

use super::config::RunConfig;
use super::run::{mean_std, train_or_reuse, RunSummary};
use super::HarnessError;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// MEMB (imaginary policy data, base `m`) vs SVG-style real-only updates with `m = 1`.
    PolicyData,
    /// Value expansion with `H ∈ {1, 2, 5}`.
    ValueExpansion,
    /// Learned models vs the environment's own dynamics and reward.
    TrueModel,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Self::PolicyData => "policy-data",
            Self::ValueExpansion => "value-expansion",
            Self::TrueModel => "true-model",
        }
    }

    /// `(condition name, config)` pairs derived from `base`.
    pub fn conditions(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        match self {
            Self::PolicyData => vec![
                ("memb".into(), RunConfig {
                    policy_data: PolicyData::Imaginary,
                    ..base.clone()
                }),
                ("svg".into(), RunConfig {
                    policy_data: PolicyData::Real,
                    m: 1,
                    ..base.clone()
                }),
            ],
            Self::ValueExpansion => [1, 2, 5]
                .into_iter()
                .map(|h| {
                    (format!("h{h}"), RunConfig {
                        q_source: QSource::Expansion,
                        horizon: h,
                        ..base.clone()
                    })
                })
                .collect(),
            Self::TrueModel => vec![
                ("learned".into(), RunConfig {
                    true_model: false,
                    ..base.clone()
                }),
                ("oracle".into(), RunConfig {
                    true_model: true,
                    ..base.clone()
                }),
            ],
        }
    }
}

impl FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "policy-data" | "policy_data" => Ok(Self::PolicyData),
            "value-expansion" | "value_expansion" => Ok(Self::ValueExpansion),
            "true-model" | "true_model" => Ok(Self::TrueModel),
            other => Err(HarnessError::Config(format!(
                "unknown suite `{other}` (expected policy-data, value-expansion or true-model)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: String,
    pub seeds: Vec<u64>,
    /// One summary per seed, in `seeds` order.
    pub runs: Vec<RunSummary>,
}

impl ConditionResult {
    pub fn final_returns(&self) -> Vec<f64> {
        self.runs.iter().filter_map(RunSummary::final_return).collect()
    }

    pub fn final_mean_std(&self) -> (f64, f64) {
        mean_std(&self.final_returns())
    }

    /// `(step, seed-mean, seed-std)` at every evaluation point shared by all seeds.
    pub fn curve(&self) -> Vec<(usize, f64, f64)> {
        let Some(first) = self.runs.first() else {
            return Vec::new();
        };
        first
            .evals
            .iter()
            .enumerate()
            .filter_map(|(i, &(step, _))| {
                let vals: Option<Vec<f64>> = self
                    .runs
                    .iter()
                    .map(|r| r.evals.get(i).filter(|e| e.0 == step).map(|e| e.1))
                    .collect();
                vals.map(|v| {
                    let (m, s) = mean_std(&v);
                    (step, m, s)
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub conditions: Vec<ConditionResult>,
}

impl SuiteResult {
    pub fn condition(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// `condition,seeds,final_return_mean,final_return_std`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("condition,seeds,final_return_mean,final_return_std\n");
        for c in &self.conditions {
            let (m, s) = c.final_mean_std();
            let _ = writeln!(out, "{},{},{m},{s}", c.name, c.final_returns().len());
        }
        out
    }

    /// Tidy long format: `condition,seed,step,episode_return_mean`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("condition,seed,step,episode_return_mean\n");
        for c in &self.conditions {
            for (seed, run) in c.seeds.iter().zip(&c.runs) {
                for (step, r) in &run.evals {
                    let _ = writeln!(out, "{},{seed},{step},{r}", c.name);
                }
            }
        }
        out
    }
}

/// Runs (or reuses) every condition × seed of `suite` under `root/runs` and
/// writes `summary.csv` and `curves.csv` into `root/ablate-<suite>`.
pub fn run_suite(suite: Suite, base: &RunConfig, seeds: &[u64], root: &Path) -> Result<SuiteResult, HarnessError> {
    let runs_root = root.join("runs");
    let mut conditions = Vec::new();
    for (name, cfg) in suite.conditions(base) {
        let mut runs = Vec::new();
        for &seed in seeds {
            let cfg = RunConfig { seed, ..cfg.clone() };
            log::info!("{} / {name} / seed {seed}", suite.name());
            runs.push(train_or_reuse(&cfg, &runs_root)?);
        }
        conditions.push(ConditionResult {
            name,
            seeds: seeds.to_vec(),
            runs,
        });
    }
    let result = SuiteResult { suite, conditions };
    let out = root.join(format!("ablate-{}", suite.name()));
    fs::create_dir_all(&out).map_err(|e| HarnessError::Io {
        path: out.clone(),
        source: e,
    })?;
    for (file, text) in [("summary.csv", result.summary_csv()), ("curves.csv", result.curves_csv())] {
        let path = out.join(file);
        fs::write(&path, text).map_err(|e| HarnessError::Io { path, source: e })?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_expected_conditions() {
        let base = RunConfig::defaults_for("pendulum").unwrap();
        let names = |s: Suite| s.conditions(&base).into_iter().map(|c| c.0).collect::<Vec<_>>();
        assert_eq!(names(Suite::PolicyData), ["memb", "svg"]);
        assert_eq!(names(Suite::ValueExpansion), ["h1", "h2", "h5"]);
        assert_eq!(names(Suite::TrueModel), ["learned", "oracle"]);
        let svg = &Suite::PolicyData.conditions(&base)[1].1;
        assert_eq!((svg.policy_data, svg.m), (PolicyData::Real, 1));
        assert!(Suite::TrueModel.conditions(&base)[1].1.true_model);
        assert_eq!("value-expansion".parse::<Suite>().unwrap(), Suite::ValueExpansion);
        assert!("nope".parse::<Suite>().is_err());
    }
}
