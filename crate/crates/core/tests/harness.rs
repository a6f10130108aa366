use std::fs;
use std::path::Path;
use std::process::Command;

use memb::envs::{make_env, Transition};
use memb::harness::{
    list_checkpoints, load_summary, model_errors, read_metrics, run_suite, train, train_or_reuse, verify_theory,
    MetricRecord, RunConfig, Suite, VerifyOptions, CONFIG_FILE, FINAL_CHECKPOINT, HASH_FILE, METRICS_FILE,
    TRAJECTORIES_FILE,
};
use memb::models::{Checkpoint, LearnedModel};

fn tiny(extra: &[(&str, &str)]) -> RunConfig {
    let mut o: Vec<(String, String)> = [
        ("epochs", "2"),
        ("steps_per_epoch", "150"),
        ("warmup_steps", "100"),
        ("eval_interval", "100"),
        ("eval_episodes", "2"),
        ("checkpoint_every", "1"),
        ("model_error_samples", "64"),
        ("batch_size", "16"),
        ("m", "2"),
        ("policy_hidden", "[8, 8]"),
        ("value_hidden", "[8, 8]"),
        ("model_hidden", "[8]"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    o.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    RunConfig::resolve(None, &o).unwrap()
}

#[test]
fn zero_epochs_persists_config_and_writes_empty_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("epochs", "0")]);
    train(&cfg, dir.path()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), "");
    let text = fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    let hash = fs::read_to_string(dir.path().join(HASH_FILE)).unwrap();
    assert_eq!(hash.trim(), cfg.hash().unwrap());
    assert!(dir.path().join(FINAL_CHECKPOINT).exists());
}

#[test]
fn metrics_stream_has_steps_evals_and_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[]);
    let rec = train(&cfg, dir.path()).unwrap();
    let records = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    let steps: Vec<_> = records.iter().filter(|r| matches!(r, MetricRecord::Step { .. })).collect();
    let evals: Vec<usize> = records
        .iter()
        .filter_map(|r| match r {
            MetricRecord::Eval { step, returns, .. } => {
                assert_eq!(returns.len(), 2);
                Some(*step)
            }
            _ => None,
        })
        .collect();
    let epochs: Vec<_> = records.iter().filter(|r| matches!(r, MetricRecord::Epoch { .. })).collect();
    assert_eq!(steps.len(), 300);
    assert_eq!(evals, vec![100, 200, 300]);
    assert_eq!(epochs.len(), 2);
    for r in &records {
        if let MetricRecord::Step { step, losses, m, k, alpha, .. } = r {
            assert_eq!(losses.is_some(), *step > 100, "step {step}");
            assert_eq!((*m, *k, *alpha), (2, 1, 0.2));
        }
        if let MetricRecord::Epoch { model_error, losses, .. } = r {
            assert!(model_error.is_some() && losses.is_some());
        }
    }
    // every line carries the documented keys
    let first = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let v: serde_json::Value = serde_json::from_str(first.lines().nth(150).unwrap()).unwrap();
    for key in ["step", "episode_return_mean", "losses", "model_error", "alpha", "m", "k"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for key in ["model_dyn", "model_rew", "q0", "q1", "v", "policy"] {
        assert!(v["losses"].get(key).is_some(), "missing losses.{key}");
    }
    assert_eq!(rec.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2]);
}

#[test]
fn identical_configs_give_byte_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny(&[("seed", "5")]);
    train(&cfg, a.path()).unwrap();
    train(&cfg, b.path()).unwrap();
    for f in [METRICS_FILE, TRAJECTORIES_FILE, CONFIG_FILE, FINAL_CHECKPOINT] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    train(&tiny(&[("seed", "6")]), c.path()).unwrap();
    assert_ne!(fs::read(a.path().join(METRICS_FILE)).unwrap(), fs::read(c.path().join(METRICS_FILE)).unwrap());
}

#[test]
fn trajectory_dump_replays_in_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("epochs", "1"), ("steps_per_epoch", "250")]);
    train(&cfg, dir.path()).unwrap();
    let ts: Vec<Transition> = fs::read_to_string(dir.path().join(TRAJECTORIES_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(ts.len(), 250);
    // the first episode, replayed from the same reset, reproduces bit-exactly
    let mut env = make_env("pendulum").unwrap();
    assert_eq!(env.reset(0), ts[0].s);
    for t in ts.iter().take_while(|t| !t.done) {
        assert_eq!(env.observation(), t.s.as_slice());
        let out = env.step(&t.a).unwrap();
        assert_eq!((out.observation, out.reward), (t.s_next.clone(), t.r));
    }
    assert!(ts.iter().position(|t| t.done) == Some(199));
}

#[test]
fn checkpoints_reload_and_model_error_csv_is_produced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[]);
    train(&cfg, dir.path()).unwrap();
    let ckpts = list_checkpoints(dir.path()).unwrap();
    assert_eq!(ckpts.len(), 2);
    let ck = Checkpoint::load(&ckpts[1].1).unwrap();
    LearnedModel::from_checkpoint(&ck, 1).unwrap();
    for name in ["policy", "v", "v_target", "q0", "q1", "dynamics", "reward"] {
        ck.section(name).unwrap();
    }
    let rows = model_errors(dir.path()).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert!(rows.iter().all(|r| r.transition_error > 0.0 && r.reward_error > 0.0));
}

#[test]
fn oracle_run_has_no_model_losses_and_zero_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("true_model", "true")]);
    train(&cfg, dir.path()).unwrap();
    for r in read_metrics(&dir.path().join(METRICS_FILE)).unwrap() {
        if let MetricRecord::Step { losses: Some(l), .. } = r {
            assert!(l.model_dyn.is_none() && l.model_rew.is_none());
        }
    }
    let rows = model_errors(dir.path()).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.transition_error == 0.0 && r.reward_error == 0.0));
}

#[test]
fn model_error_averages_seed_subdirectories_and_requires_checkpoints() {
    let root = tempfile::tempdir().unwrap();
    let mut single = Vec::new();
    for seed in 0..2 {
        let d = root.path().join(format!("seed{seed}"));
        train(&tiny(&[("seed", &seed.to_string())]), &d).unwrap();
        single.push(model_errors(&d).unwrap());
    }
    let avg = model_errors(root.path()).unwrap();
    for (i, row) in avg.iter().enumerate() {
        let expect = (single[0][i].transition_error + single[1][i].transition_error) / 2.0;
        assert!((row.transition_error - expect).abs() < 1e-12);
    }
    assert!(model_errors(&root.path().join("nowhere")).is_err());
    let bare = tempfile::tempdir().unwrap();
    train(&tiny(&[("epochs", "0")]), bare.path()).unwrap();
    assert!(model_errors(bare.path()).is_err());
}

#[test]
fn finished_runs_are_reused() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("epochs", "1")]);
    let first = train_or_reuse(&cfg, root.path()).unwrap();
    let metrics = first.dir.join(METRICS_FILE);
    let stamp = fs::metadata(&metrics).unwrap().modified().unwrap();
    let again = train_or_reuse(&cfg, root.path()).unwrap();
    assert_eq!(first, again);
    assert_eq!(fs::metadata(&metrics).unwrap().modified().unwrap(), stamp);
    assert_eq!(load_summary(&first.dir).unwrap().evals.len(), 1);
}

#[test]
fn value_expansion_suite_runs_three_conditions_over_five_seeds() {
    let root = tempfile::tempdir().unwrap();
    let base = tiny(&[("epochs", "1"), ("steps_per_epoch", "120"), ("dump_trajectories", "false")]);
    let res = run_suite(Suite::ValueExpansion, &base, &[0, 1, 2, 3, 4], root.path()).unwrap();
    assert_eq!(res.conditions.len(), 3);
    let runs: usize = res.conditions.iter().map(|c| c.runs.len()).sum();
    assert_eq!(runs, 15);
    assert_eq!(fs::read_dir(root.path().join("runs")).unwrap().count(), 15);
    let summary = fs::read_to_string(root.path().join("ablate-value-expansion/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "condition,seeds,final_return_mean,final_return_std");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("h1,5,"));
    let curves = fs::read_to_string(root.path().join("ablate-value-expansion/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 15);
}

#[test]
fn verify_theory_is_reproducible_and_counts_lines() {
    let opts = VerifyOptions {
        count: 4,
        seed: 11,
        ..VerifyOptions::default()
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let s = verify_theory(&opts, &mut a).unwrap();
    verify_theory(&opts, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 4 * (1 + 4 + 1) + 1);
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["kind"], "summary");
    assert_eq!(last["violations"].as_u64().unwrap() as usize, s.violations);
    assert_eq!(s.branched_return.iter().map(|b| b.k).collect::<Vec<_>>(), vec![1, 2, 3, 5]);
    let bad = VerifyOptions { ks: vec![0], ..opts };
    assert!(verify_theory(&bad, &mut Vec::new()).is_err());
}

fn memb(args: &[&str], root: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_memb"))
        .args(args)
        .env("MEMB_RUN_ROOT", root)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

#[test]
fn cli_writes_under_run_root_and_reports_faults_as_json() {
    let root = tempfile::tempdir().unwrap();
    let args = [
        "train", "--epochs", "1", "--steps-per-epoch", "120", "--seed", "2", "--set", "warmup_steps=100", "--set",
        "policy_hidden=[8,8]", "--set", "value_hidden=[8,8]", "--set", "eval_interval=120", "--set", "batch_size=16",
    ];
    let out = memb(&args, root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = String::from_utf8(out.stdout).unwrap().trim().to_string();
    assert!(Path::new(&dir).starts_with(root.path()));
    assert!(Path::new(&dir).join(FINAL_CHECKPOINT).exists());

    let csv = memb(&["model-error", &dir], root.path());
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.lines().all(|l| l.split(',').count() == 3));

    let bad = memb(&["train", "--env", "cartpole"], root.path());
    assert!(!bad.status.success());
    let line: serde_json::Value = serde_json::from_str(String::from_utf8(bad.stderr).unwrap().trim()).unwrap();
    assert!(line["error"].as_str().unwrap().contains("cartpole"));

    let th = memb(&["verify-theory", "--count", "3", "--lemmas", "false"], root.path());
    assert!(th.status.success());
    assert_eq!(String::from_utf8(th.stdout).unwrap().lines().count(), 3 * 5 + 1);
}
