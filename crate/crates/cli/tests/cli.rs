//! End-to-end tests driving the compiled binary: exit codes, artifact layout,
//! determinism across invocations, and the eval round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dirl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirl"))
        .args(args)
        .output()
        .expect("failed to spawn dirl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process had no exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A config small enough that train/compare finish in a couple of seconds.
fn tiny_config(dir: &Path, run_name: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{run_name}.toml"));
    let body = format!(
        r#"run_name = "{run_name}"

[scenario]
n_source = 120
n_target = 120
n_target_test = 40
seed = 11

[train]
iterations = 90
eval_every = 45
seed = 11
hidden = [12, 12]
{extra}
"#
    );
    fs::write(&path, body).unwrap();
    path
}

fn read_manifest(run_dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(run_dir.join("manifest.json")).expect("manifest.json missing");
    serde_json::from_str(&text).expect("manifest.json is not valid JSON")
}

#[test]
fn help_and_version_exit_zero() {
    let help = dirl(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("gen-data"));
    assert_eq!(code(&dirl(&["--version"])), 0);
}

#[test]
fn missing_config_file_is_a_usage_error_naming_the_path() {
    let out = dirl(&["gen-data", "--config", "/no/such/file.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/no/such/file.toml"));
}

#[test]
fn unknown_toml_key_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "not_a_real_key = 3\n").unwrap();
    let out = dirl(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not_a_real_key"));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let out = dirl(&["train", "--mode", "warp"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("warp"));
}

#[test]
fn mode_flag_is_rejected_where_it_has_no_meaning() {
    let tmp = TempDir::new().unwrap();
    for sub in ["gen-data", "compare"] {
        let out = dirl(&[
            sub,
            "--mode",
            "dirl",
            "--out",
            tmp.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 2, "{sub} accepted --mode");
        assert!(stderr(&out).contains("--mode"));
    }
}

#[test]
fn gen_data_writes_default_row_counts() {
    let tmp = TempDir::new().unwrap();
    let out = dirl(&["gen-data", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    // Default scenario sizes: 2000 source, 2000 target train, 100 target test.
    let run = tmp.path().join("run");
    for (name, rows) in [
        ("source.csv", 2000),
        ("target_train.csv", 2000),
        ("target_test.csv", 100),
    ] {
        let text = fs::read_to_string(run.join(name)).unwrap();
        assert_eq!(text.lines().count(), rows + 1, "{name} row count");
        assert!(text.starts_with("x0,x1,label,domain\n"), "{name} header");
    }
    let manifest = read_manifest(&run);
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["rows"]["source"], 2000);
    assert_eq!(manifest["rows"]["target_test"], 100);
    assert_eq!(manifest["dataset_checksum"].as_str().unwrap().len(), 64);
}

#[test]
fn gen_data_is_deterministic_in_the_seed() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let out = dirl(&["gen-data", "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let csv = |dir: &Path| fs::read_to_string(dir.join("run/source.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b), "same seed must reproduce the same data");
    assert_ne!(csv(&a), csv(&c), "different seeds must differ");

    let sum = |dir: &Path| read_manifest(&dir.join("run"))["dataset_checksum"].clone();
    assert_eq!(sum(&a), sum(&b));
    assert_ne!(sum(&a), sum(&c));
}

#[test]
fn seed_flag_overrides_both_data_and_training_seeds() {
    let tmp = TempDir::new().unwrap();
    let out = dirl(&["gen-data", "--seed", "99", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let manifest = read_manifest(&tmp.path().join("run"));
    assert_eq!(manifest["config"]["scenario"]["seed"], 99);
    assert_eq!(manifest["config"]["train"]["seed"], 99);
}

#[test]
fn existing_run_dir_requires_force() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().to_str().unwrap().to_owned();
    assert_eq!(code(&dirl(&["gen-data", "--out", &out_dir])), 0);

    let again = dirl(&["gen-data", "--out", &out_dir]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));

    // A marker file proves --force replaces the directory instead of merging.
    fs::write(tmp.path().join("run/stale.txt"), "old").unwrap();
    let forced = dirl(&["gen-data", "--out", &out_dir, "--force"]);
    assert_eq!(code(&forced), 0, "stderr: {}", stderr(&forced));
    assert!(!tmp.path().join("run/stale.txt").exists());
}

#[test]
fn train_writes_the_expected_artifacts() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), "t", "");
    let out = dirl(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--mode",
        "source_only",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let run = tmp.path().join("t");
    for name in [
        "manifest.json",
        "loss_trace.csv",
        "metrics.jsonl",
        "checkpoint_final.csv",
        "embeddings.csv",
        "grid.csv",
    ] {
        assert!(run.join(name).exists(), "{name} missing");
    }
    // One parameter snapshot per evaluation point: iterations 45 and 90.
    assert!(run.join("checkpoints/iter_000045.csv").exists());
    assert!(run.join("checkpoints/iter_000090.csv").exists());

    let manifest = read_manifest(&run);
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["completed_iterations"], 90);
    assert_eq!(manifest["config"]["train"]["mode"], "source_only");
    assert!(manifest["final_metrics"]["source_accuracy"].is_number());

    let trace = fs::read_to_string(run.join("loss_trace.csv")).unwrap();
    let header = trace.lines().next().unwrap();
    assert_eq!(
        header,
        "iteration,ce,marginal_disc,marginal_gen,conditional_disc,conditional_gen,triplet,total,skipped_classes"
    );
    assert_eq!(trace.lines().count(), 91, "header plus one row per iteration");

    let grid = fs::read_to_string(run.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 101 * 101 + 1);
}

#[test]
fn train_is_deterministic_in_the_seed() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), "t", "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = dirl(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let ckpt = |dir: &Path| fs::read_to_string(dir.join("t/checkpoint_final.csv")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b), "same config must reproduce the same parameters");
    let trace = |dir: &Path| fs::read_to_string(dir.join("t/loss_trace.csv")).unwrap();
    assert_eq!(trace(&a), trace(&b));
}

#[test]
fn eval_reproduces_the_training_runs_final_metrics() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), "t", "[train.probes]\nfinal_probes = true\n");
    let out = dirl(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let run = tmp.path().join("t");
    let eval = dirl(&["eval", "--run", run.to_str().unwrap()]);
    assert_eq!(code(&eval), 0, "stderr: {}", stderr(&eval));

    let manifest = read_manifest(&run);
    let printed: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert_eq!(printed["metrics"], manifest["final_metrics"]);
    assert_eq!(printed["dataset_checksum"], manifest["dataset_checksum"]);
    assert_eq!(printed["run_id"], manifest["run_id"]);

    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    assert_eq!(on_disk["metrics"], printed["metrics"]);
}

#[test]
fn eval_rejects_a_run_whose_data_cannot_be_regenerated() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), "t", "");
    let out = dirl(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    // Corrupt the recorded scenario seed; regeneration then mismatches the
    // recorded checksum and eval must refuse rather than report bogus numbers.
    let run = tmp.path().join("t");
    let mut manifest = read_manifest(&run);
    manifest["config"]["scenario"]["seed"] = serde_json::json!(12345);
    fs::write(run.join("manifest.json"), serde_json::to_string(&manifest).unwrap()).unwrap();

    let eval = dirl(&["eval", "--run", run.to_str().unwrap()]);
    assert_eq!(code(&eval), 1);
    assert!(stderr(&eval).contains("checksum"));
}

#[test]
fn eval_refuses_non_training_runs() {
    let tmp = TempDir::new().unwrap();
    let out = dirl(&["gen-data", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let eval = dirl(&["eval", "--run", tmp.path().join("run").to_str().unwrap()]);
    assert_eq!(code(&eval), 2);
    assert!(stderr(&eval).contains("training run"));
}

#[test]
fn compare_tabulates_every_mode_on_identical_data() {
    let tmp = TempDir::new().unwrap();
    let config = tiny_config(tmp.path(), "cmp", "");
    let out = dirl(&[
        "compare",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let run = tmp.path().join("cmp");
    let table = fs::read_to_string(run.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5, "header plus one row per mode");
    assert!(lines[0].starts_with("mode,target_accuracy,source_accuracy"));
    let modes: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(modes, ["source_only", "marginal_only", "triplet_only", "dirl"]);

    // Every row must cite the same dataset: the whole point of compare.
    let checksums: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert!(checksums.iter().all(|c| *c == checksums[0] && c.len() == 64));

    for mode in ["source_only", "marginal_only", "triplet_only", "dirl"] {
        let sub = run.join("modes").join(mode);
        assert!(sub.join("checkpoint_final.csv").exists(), "{mode} checkpoint");
        assert!(sub.join("loss_trace.csv").exists(), "{mode} loss trace");
    }

    let manifest = read_manifest(&run);
    assert_eq!(manifest["command"], "compare");
    assert_eq!(manifest["modes"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["failures"].as_array().unwrap().len(), 0);
}
