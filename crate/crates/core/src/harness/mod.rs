//! Experiment orchestration: configuration, training runs with metrics and
//! checkpoints, the ablation suites, theory verification and model-error
//! re-evaluation.

mod ablate;
mod config;
mod model_error;
mod run;
mod verify;

use std::path::PathBuf;

use crate::agent::AgentError;
use crate::envs::EnvError;
use crate::models::ModelError;
use crate::theory::TheoryError;

pub use ablate::{run_suite, ConditionResult, Suite, SuiteResult, DEFAULT_SEEDS};
pub use config::{parse_override, RunConfig};
pub use model_error::{list_checkpoints, model_error_csv, model_errors, run_dirs, run_model_errors, spearman, ModelErrorRow};
pub use run::{
    checkpoint_path, eval_seed_base, load_summary, mean_std, read_metrics, train, train_or_reuse, MetricRecord,
    ModelErrorRecord, RunRecord, RunSummary, CHECKPOINT_DIR, CONFIG_FILE, FINAL_CHECKPOINT, HASH_FILE, METRICS_FILE,
    TRAJECTORIES_FILE,
};
pub use verify::{verify_theory, BranchTally, LemmaTally, Tally, VerifyOptions, VerifySummary};

/// Environment variable naming the directory runs are written under.
pub const RUN_ROOT_ENV: &str = "MEMB_RUN_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing output: {0}")]
    Stdout(std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("no run directory (config.toml) found under {0}")]
    MissingRun(PathBuf),
    #[error("no checkpoints found in {0}")]
    MissingCheckpoints(PathBuf),
}
