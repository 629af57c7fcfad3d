use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hcr_core::envs::{EnvConfig, Environment, Env};
use hcr_core::evaluation::EvaluationReport;
use hcr_core::replay::{CheckpointPool, CheckpointRecord, Role};

fn hcr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcr")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = hcr(args, cwd);
    assert!(out.status.success(), "hcr {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn shipped_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../envs").join(format!("{name}.cfg"))
}

/// Labyrinth checkpoints along a walk on the spawn ledge; the first
/// `eval` get the eval role.
fn write_pool(path: &Path, total: usize, eval: usize) {
    let config = EnvConfig::default_key_labyrinth();
    let (mut env, _) = Env::reset_new(&config, 0).unwrap();
    let records = (0..total)
        .map(|i| {
            env.step(if (i / 4) % 2 == 0 { 4 } else { 3 }).unwrap();
            CheckpointRecord {
                id: format!("cp-{i:03}"),
                checkpoint: env.snapshot(),
                source_session: format!("s{:04}", 1 + i / 50),
                tick_index: env.info().tick,
                role: if i < eval { Role::Eval } else { Role::Train },
            }
        })
        .collect();
    CheckpointPool::new(config.kind(), &config.digest(), records).unwrap().save(path).unwrap();
}

const QUICK: &[&str] = &["--frames", "3000", "--learn-start", "1000", "--metrics-period", "1000"];

fn train_hcr(dir: &Path, out: &str, seed: &str) {
    let config = shipped_config("key-labyrinth");
    let mut args = vec!["train", "--mode", "hcr", "--env", config.to_str().unwrap(), "--pool", "pool.jsonl"];
    args.extend_from_slice(&["--seed", seed, "--out", out]);
    args.extend_from_slice(QUICK);
    ok(&args, dir);
}

#[test]
fn shipped_game_configs_are_the_built_in_defaults() {
    for (name, default) in [
        ("key-labyrinth", EnvConfig::default_key_labyrinth()),
        ("detective-grid", EnvConfig::default_detective_grid()),
    ] {
        assert_eq!(EnvConfig::load(&shipped_config(name)).unwrap(), default, "{name}");
    }
}

#[test]
fn hcr_without_a_pool_names_the_missing_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = hcr(&["train", "--mode", "hcr", "--out", "run"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--pool"));
    let out = hcr(&["train", "--mode", "her", "--out", "run"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--human"));
}

#[test]
fn bad_inputs_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--mode", "sarsa", "--out", "run"],
        vec!["train", "--mode", "hcr", "--pool", "missing.jsonl", "--out", "run", "--frames", "100"],
        vec!["train", "--mode", "vanilla", "--env", "missing.cfg", "--out", "run"],
        vec!["eval", "--policy", "random", "--pool", "missing.jsonl"],
        vec!["eval", "--policy", "greedy", "--pool", "missing.jsonl"],
    ] {
        let out = hcr(&args, dir.path());
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn train_writes_config_metrics_and_final_bundle() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 40, 20);
    train_hcr(dir.path(), "run1", "7");
    let run = dir.path().join("run1");
    for file in ["train_config.json", "metrics.jsonl", "episodes.jsonl", "summary.json", "final/weights.bin", "final/agent.json"] {
        assert!(run.join(file).exists(), "{file} missing");
    }
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn identical_train_invocations_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 40, 20);
    train_hcr(dir.path(), "a", "3");
    train_hcr(dir.path(), "b", "3");
    train_hcr(dir.path(), "c", "4");
    let read = |run: &str, file: &str| fs::read(dir.path().join(run).join(file)).unwrap();
    for file in ["metrics.jsonl", "episodes.jsonl", "final/weights.bin"] {
        assert_eq!(read("a", file), read("b", file), "{file}");
    }
    assert_ne!(read("a", "final/weights.bin"), read("c", "final/weights.bin"));
}

#[test]
fn eval_writes_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 140, 100);
    train_hcr(dir.path(), "run1", "1");
    let args = ["eval", "--bundle", "run1/final", "--pool", "pool.jsonl", "--episodes", "100", "--epsilon", "0.05"];
    ok(&[&args[..], &["--cap", "200", "--out", "report.json"]].concat(), dir.path());
    let report = EvaluationReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(report.rows.len(), 100);
    assert_eq!(report.policy, "hcr");
    assert_eq!(report.config.epsilon, 0.05);
    let mut ids: Vec<_> = report.rows.iter().map(|r| r.checkpoint_id.clone()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 100, "each eval checkpoint starts exactly one episode");
}

#[test]
fn random_policy_needs_no_weights() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 30, 10);
    let stdout = ok(
        &["eval", "--policy", "random", "--pool", "pool.jsonl", "--episodes", "10", "--cap", "100", "--out", "r.json"],
        dir.path(),
    );
    assert!(stdout.starts_with("random"));
    let report = EvaluationReport::load(&dir.path().join("r.json")).unwrap();
    assert_eq!((report.policy.as_str(), report.rows.len()), ("random", 10));
}

#[test]
fn eval_refuses_a_pool_that_overlaps_training() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 40, 20);
    train_hcr(dir.path(), "run1", "1");
    // Same records, every one now eval-role: cp-020.. were trained on.
    write_pool(&dir.path().join("leaky.jsonl"), 40, 40);
    let out = hcr(&["eval", "--bundle", "run1/final", "--pool", "leaky.jsonl", "--episodes", "5"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cp-020"), "{stderr}");
}

#[test]
fn compare_tabulates_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 30, 10);
    let base = ["eval", "--policy", "random", "--pool", "pool.jsonl", "--episodes", "10", "--cap", "100"];
    ok(&[&base[..], &["--out", "a.json"]].concat(), dir.path());
    ok(&[&base[..], &["--seed", "1", "--out", "b.json"]].concat(), dir.path());
    let table = ok(&["compare", "a.json", "b.json"], dir.path());
    assert!(table.starts_with("game"), "{table}");
    assert!(table.contains("key-labyrinth"));
    let json = ok(&["compare", "a.json", "b.json", "--json"], dir.path());
    assert!(serde_json::from_str::<serde_json::Value>(&json).is_ok());
}

#[test]
fn split_halves_a_pool_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 200, 0);
    ok(&["pool", "split", "pool.jsonl", "--ratio", "0.5", "--seed", "7", "--out", "a.jsonl"], dir.path());
    ok(&["pool", "split", "pool.jsonl", "--ratio", "0.5", "--seed", "7", "--out", "b.jsonl"], dir.path());
    let a = CheckpointPool::load(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!((a.count(Role::Train), a.count(Role::Eval)), (100, 100));
    assert!(a.overlap(Role::Eval, &a.ids(Role::Train)).is_empty());
    assert_eq!(fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());
    // Without --out the file is rewritten in place.
    ok(&["pool", "split", "pool.jsonl", "--ratio", "0.5", "--seed", "7"], dir.path());
    assert_eq!(fs::read(dir.path().join("pool.jsonl")).unwrap(), fs::read(dir.path().join("a.jsonl")).unwrap());
}

#[test]
fn inspect_counts_roles_and_sessions() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 120, 30);
    let text = ok(&["pool", "inspect", "pool.jsonl"], dir.path());
    assert!(text.contains("records: 120"));
    assert!(text.contains("train: 90") && text.contains("eval: 30"));
    assert!(text.contains("s0001: train 20, eval 30"), "{text}");
    assert!(text.contains("s0003: train 20, eval 0"), "{text}");
}

#[test]
fn inspect_on_an_empty_pool_reports_zeros() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let text = ok(&["pool", "inspect", "empty.jsonl"], dir.path());
    assert!(text.contains("records: 0") && text.contains("train: 0") && text.contains("eval: 0"), "{text}");
}

#[test]
fn inspect_reports_parse_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("pool.jsonl"), 3, 0);
    let mut text = fs::read_to_string(dir.path().join("pool.jsonl")).unwrap();
    text.push_str("{broken\n");
    fs::write(dir.path().join("pool.jsonl"), text).unwrap();
    let out = hcr(&["pool", "inspect", "pool.jsonl"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pool.jsonl:4"));
}

#[test]
fn demonstrate_then_train_her_and_hcr_from_the_recordings() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["demonstrate", "--sessions", "2", "--max-inputs", "60", "--seed", "2"], dir.path());
    assert_eq!(stdout.lines().count(), 2);
    ok(&["pool", "split", "pool.jsonl", "--ratio", "0.25", "--seed", "1"], dir.path());
    let mut her = vec!["train", "--mode", "her", "--human", "sessions", "--out", "her"];
    her.extend_from_slice(QUICK);
    ok(&her, dir.path());
    let mut hcr_args = vec!["train", "--mode", "hcr", "--pool", "pool.jsonl", "--out", "hcr"];
    hcr_args.extend_from_slice(QUICK);
    ok(&hcr_args, dir.path());
    let eval = ok(&["eval", "--bundle", "hcr/final", "--pool", "pool.jsonl", "--episodes", "5", "--cap", "200"], dir.path());
    assert!(eval.starts_with("hcr"));
}
