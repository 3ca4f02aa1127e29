use std::path::Path;
use std::process::{Command, Output};

use trifusion_harness::cli::{merge, overlay, resolve_run, RunArgs};

fn trifusion(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trifusion"));
    c.args(args).arg("--quiet").env_remove("TRIFUSION_OUTPUT_ROOT");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_succeeds_and_bad_flags_are_usage_errors() {
    let out = Command::new(env!("CARGO_BIN_EXE_trifusion")).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "fuse", "train", "eval", "suite", "plot", "inspect"] {
        assert!(text.contains(sub), "{sub}");
    }
    assert_eq!(code(&trifusion(&["train", "--no-such-flag"], &[])), 1);
    assert_eq!(code(&trifusion(&["train", "--modalities", "X"], &[])), 1);
    assert_eq!(code(&trifusion(&["train"], &[])), 1);
    assert_eq!(code(&trifusion(&["inspect"], &[])), 1);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let o = trifusion(&["train", "--dataset", missing.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = trifusion(&["plot", "--record", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn end_to_end_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let scene = root.join("scene.toml");
    std::fs::write(&scene, "[grid]\nxs = [100.0]\nys = [70.0, 190.0]\n").unwrap();
    let o = trifusion(
        &["simulate", "--frames", "8", "--seed", "3", "--out", data.to_str().unwrap(), "--config", scene.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 cases"));

    let run_file = root.join("run.toml");
    std::fs::write(&run_file, "train_per_case = 5\ntest_per_case = 3\n[optimizer]\nepochs = 1\nbatch_size = 16\n").unwrap();
    let out_root = root.join("runs");
    let env = [("TRIFUSION_OUTPUT_ROOT", out_root.as_path())];
    let d = data.to_str().unwrap();
    let cfg = run_file.to_str().unwrap();
    let o = trifusion(&["train", "--dataset", d, "--config", cfg, "--epochs", "9", "--name", "cli"], &env);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = out_root.join("cli");
    assert!(run.join("best.safetensors").is_file());
    // The config file wins over the flag.
    assert_eq!(std::fs::read_to_string(run.join("train.jsonl")).unwrap().matches(r#""event":"epoch""#).count(), 1);

    let o = trifusion(&["eval", "--run", run.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("close range"));
    let record = run.join("record.json");

    let figs = root.join("figs");
    let o = trifusion(&["plot", "--record", record.to_str().unwrap(), "--out", figs.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(figs.join("cli_scatter.svg").is_file());

    let ck = run.join("best.safetensors");
    let o = trifusion(&["inspect", "--dataset", d, "--checkpoint", ck.to_str().unwrap(), "--record", record.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("parameters"));

    let panel = root.join("panel.png");
    let o = trifusion(&["fuse", "--dataset", d, "--case", "px100_py70_S", "--out", panel.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(panel.is_file());

    let boom = root.join("boom.toml");
    std::fs::write(&boom, "train_per_case = 5\ntest_per_case = 3\n[optimizer]\nepochs = 3\nbatch_size = 16\nlearning_rate = 1e30\n").unwrap();
    let o = trifusion(&["train", "--dataset", d, "--config", boom.to_str().unwrap(), "--name", "boom2"], &env);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let o = trifusion(&["suite", "--dataset", d, "--config", cfg, "--only", "tri-modal,pressure"], &env);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("tri-modal") && table.contains("pressure"));
    assert!(out_root.join("suite_table.txt").is_file());
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("run.toml");
    std::fs::write(&f, "seed = 7\n[optimizer]\nepochs = 2\n").unwrap();
    let args = RunArgs {
        dataset: Some("somewhere".into()),
        profile: "toy".into(),
        config: Some(f),
        name: Some("n".into()),
        modalities: None,
        architecture: None,
        epochs: Some(50),
        batch_size: Some(8),
        learning_rate: None,
        seed: Some(3),
        split_seed: None,
        pressure_cases_only: false,
        out: None,
    };
    let cfg = resolve_run(&args).unwrap();
    assert_eq!(cfg.optimizer.epochs, 2);
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.optimizer.batch_size, 8);
    assert_eq!(cfg.name, "n");
    assert_eq!(cfg.optimizer.momentum, 0.9);
}

#[test]
fn merge_is_recursive() {
    let mut a: toml::Value = toml::from_str("x = 1\n[t]\na = 1\nb = 2\n").unwrap();
    merge(&mut a, toml::from_str("[t]\nb = 3\nc = 4\n").unwrap());
    assert_eq!(a["x"].as_integer(), Some(1));
    assert_eq!(a["t"]["a"].as_integer(), Some(1));
    assert_eq!(a["t"]["b"].as_integer(), Some(3));
    assert_eq!(a["t"]["c"].as_integer(), Some(4));
    let v: Vec<u32> = overlay(vec![1, 2], None).unwrap();
    assert_eq!(v, vec![1, 2]);
}
