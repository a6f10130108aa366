use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use memb::harness::{
    model_error_csv, model_errors, parse_override, run_suite, train, verify_theory, RunConfig, Suite, VerifyOptions,
    DEFAULT_SEEDS, RUN_ROOT_ENV,
};

#[derive(Parser)]
#[command(name = "memb", version, about = "Model-embedding model-based RL and return-bound verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent; prints the run directory.
    Train(TrainArgs),
    /// Run an ablation suite over five seeds; prints the summary CSV.
    Ablate(AblateArgs),
    /// Check the return bounds on random Lipschitz MDPs; emits JSONL reports and a summary line.
    VerifyTheory(VerifyArgs),
    /// Re-evaluate model error at every checkpoint of a run (or of its seed subdirectories).
    ModelError(ModelErrorArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with flat `key = value` entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set m=1 --set policy_hidden=[64,64]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Directory runs are written under.
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    run_root: PathBuf,
}

impl ConfigArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
        let flags = [
            ("env", self.env.as_ref().map(|e| format!("{e:?}"))),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("steps_per_epoch", self.steps_per_epoch.map(|v| v.to_string())),
            ("seed", seed.map(|v| v.to_string())),
        ];
        overrides.extend(flags.into_iter().filter_map(|(k, v)| Some((k.to_string(), v?))));
        Ok(RunConfig::resolve(file.as_deref(), &overrides)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to `<run root>/<env>-seed<seed>-<config hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// policy-data, value-expansion or true-model.
    #[arg(long)]
    suite: Suite,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Branch lengths for the branched-rollout bound.
    #[arg(long = "k", value_delimiter = ',', default_values_t = [1usize, 2, 3, 5])]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    /// Also check the intermediate inequalities.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    lemmas: bool,
    /// Write the JSONL stream here instead of stdout; the summary line still goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero when any violation is found.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct ModelErrorArgs {
    run_dir: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.config.resolve(a.seed)?;
            let dir = match a.out {
                Some(d) => d,
                None => a.config.run_root.join(cfg.run_name()?),
            };
            let rec = train(&cfg, &dir)?;
            println!("{}", rec.dir.display());
        }
        Command::Ablate(a) => {
            let base = a.config.resolve(None)?;
            let result = run_suite(a.suite, &base, &a.seeds, &a.config.run_root)?;
            print!("{}", result.summary_csv());
        }
        Command::VerifyTheory(a) => {
            let opts = VerifyOptions {
                count: a.count,
                seed: a.seed,
                ks: a.ks,
                states: a.states,
                actions: a.actions,
                lemmas: a.lemmas,
            };
            let summary = match &a.out {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
                    let s = verify_theory(&opts, &mut w)?;
                    println!("{}", serde_json::to_string(&s)?);
                    s
                }
                None => verify_theory(&opts, &mut io::stdout().lock())?,
            };
            if a.strict && summary.violations > 0 {
                anyhow::bail!("{} bound violations", summary.violations);
            }
        }
        Command::ModelError(a) => {
            let rows = model_errors(&a.run_dir)?;
            write_output(a.out.as_deref(), &model_error_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
