use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[pool]
n_train = 12
n_test = 3

[env]
episode_len = 80

[env.camera]
width = 12
height = 12

[agent]
width = 12
height = 12
lstm1 = 6
lstm2 = 4
depth_groups = 2

[agent.conv1]
filters = 3
kernel = 4
stride = 2

[agent.conv2]
filters = 4
kernel = 3
stride = 1

[train]
workers = 1
t_max = 10

[eval]
episodes_per_map = 2
"#;

fn navbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navbench"))
        .args(args)
        .env_remove("NAVBENCH_CONFIG")
        .env("NAVBENCH_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = navbench(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn count_files(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

/// A tiny config plus a short training run shared by several tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let run = root.join("train");
    ok(&["--config", s(&config), "train", "--seed", "3", "--steps", "300", "--checkpoint-every", "100", "--out", s(&run)]);
    Fixture { _dir: dir, checkpoint: run.join("final.bin"), root, config }
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&navbench(&["--help"])), 0);
    assert_eq!(code(&navbench(&["train", "--help"])), 0);
    assert_eq!(code(&navbench(&["--bogus"])), 1);
    // Seeds are mandatory.
    assert_eq!(code(&navbench(&["train", "--out", "/tmp/never"])), 1);
    assert_eq!(code(&navbench(&["eval", "--checkpoint", "x", "--out", "/tmp/never"])), 1);
    let out = navbench(&["eval", "--seed", "1", "--checkpoint", "/definitely/missing.bin", "--out", "/tmp/never"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = navbench(&["--set", "train.gamma=1.5", "train", "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    let out = navbench(&["--set", "train.no_such_key=1", "train", "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn gen_maps_writes_pool() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pool");
    ok(&["gen-maps", "--seed", "7", "--train", "100", "--test", "10", "--out", s(&out)]);
    assert_eq!(count_files(&out.join("maps")), 110);
    let manifest = fs::read_to_string(out.join("pool.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 110);
    assert_eq!(manifest.lines().filter(|l| l.ends_with("\ttest")).count(), 10);
    let prov = fs::read_to_string(out.join("provenance.toml")).unwrap();
    assert!(prov.contains("config_hash") && prov.contains("pool_seed = 7") && prov.contains("code_version"));
}

#[test]
fn train_eval_replay_and_analysis() {
    let fx = fixture();
    let cfg = s(&fx.config);
    let ckpt = s(&fx.checkpoint);
    let train_dir = fx.root.join("train");
    assert_eq!(count_files(&train_dir.join("checkpoints")), 3);
    let csv = fs::read_to_string(train_dir.join("training.csv")).unwrap();
    assert!(csv.starts_with("global_step,"));

    // Stage 3 on the ten static maps, three episodes each.
    let eval = fx.root.join("eval");
    ok(&["--config", cfg, "eval", "--seed", "11", "--stage", "3", "--checkpoint", ckpt, "--episodes", "3", "--out", s(&eval)]);
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).filter(|l| !l.starts_with("mean") && !l.starts_with("std") && !l.starts_with("count")).collect();
    assert_eq!(rows.len(), 30);
    let mut per_map = std::collections::BTreeMap::new();
    for r in &rows {
        *per_map.entry(r.split(',').next().unwrap().to_string()).or_insert(0) += 1;
    }
    assert!(per_map.values().all(|&n| n == 3), "{per_map:?}");
    assert_eq!(count_files(&eval.join("logs")), 30);

    // Replaying from the manifest reproduces every file.
    let again = fx.root.join("replay");
    ok(&["eval", "--replay", s(&eval.join("manifest.toml")), "--checkpoint", ckpt, "--workers", "3", "--out", s(&again)]);
    for f in ["metrics.csv", "metrics.json", "manifest.toml", "config.toml"] {
        assert_eq!(fs::read(eval.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f} differs");
    }
    for entry in fs::read_dir(eval.join("logs")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(eval.join("logs").join(&name)).unwrap(), fs::read(again.join("logs").join(&name)).unwrap());
    }

    // A changed environment no longer matches the checkpoint.
    let out = navbench(&["--config", cfg, "--set", "env.goal_reward=5", "eval", "--seed", "1", "--checkpoint", ckpt, "--out", s(&fx.root.join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config hash mismatch"));
    let out = navbench(&["eval", "--replay", s(&eval.join("manifest.toml")), "--set", "eval.seed=12", "--checkpoint", ckpt, "--out", s(&fx.root.join("y"))]);
    assert_eq!(code(&out), 2);

    // Analysis on the evaluated run.
    let log = fs::read_dir(eval.join("logs")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).min().unwrap();
    let rel = format!("logs/{log}");
    let sal = fx.root.join("saliency");
    ok(&["analyze", "saliency", "--run", s(&eval), "--log", &rel, "--checkpoint", ckpt, "--frames-every", "40", "--out", s(&sal)]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(sal.join("saliency.json")).unwrap()).unwrap();
    assert_eq!(summary["frames"], 80);
    assert_eq!(count_files(&sal.join("frames")), 6);
    let top = fx.root.join("top.ppm");
    ok(&["analyze", "topdown", "--run", s(&eval), "--log", &rel, "--px", "8", "--out", s(&top)]);
    assert!(fs::read(&top).unwrap().starts_with(b"P6\n"));
    let plots = fx.root.join("plots");
    let spec = format!("tiny={}", s(&train_dir.join("training.csv")));
    ok(&["analyze", "plot", "--training", &spec, "--out", s(&plots)]);
    assert!(fs::read_to_string(plots.join("reward.svg")).unwrap().contains("<svg"));
}

#[test]
fn bench_ablate_and_baseline() {
    let fx = fixture();
    let cfg = s(&fx.config);
    let ckpt = s(&fx.checkpoint);
    let bench = fx.root.join("bench");
    ok(&["--config", cfg, "bench", "--seed", "2", "--checkpoint", ckpt, "--episodes", "1", "--workers", "2", "--out", s(&bench)]);
    let summary = fs::read_to_string(bench.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    assert!(bench.join("stage5-unseen/manifest.toml").is_file());
    let plots = fx.root.join("plots");
    ok(&["analyze", "plot", "--summary", s(&bench.join("summary.csv")), "--metric", "reward", "--out", s(&plots)]);
    assert!(plots.join("reward.svg").is_file());

    let ablate = fx.root.join("ablate");
    ok(&["--config", cfg, "ablate", "--seed", "2", "--stage", "3", "--checkpoint", ckpt, "--episodes", "1", "--out", s(&ablate)]);
    assert_eq!(fs::read_to_string(ablate.join("ablation.csv")).unwrap().lines().count(), 5);

    let base = fx.root.join("baseline");
    ok(&["--config", cfg, "baseline", "--seed", "4", "--probe", "square", "--probe-episodes", "5", "--out", s(&base)]);
    let probe: serde_json::Value = serde_json::from_str(&fs::read_to_string(base.join("probe_square.json")).unwrap()).unwrap();
    assert_eq!(probe["episodes"], 5);
}

#[test]
fn selftest_quick_passes() {
    let out = ok(&["selftest", "--quick"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 8 && !text.contains("FAIL"), "{text}");
}
