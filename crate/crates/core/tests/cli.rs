use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynamic_tta::harness::output::{read_metrics_json, Manifest, Table, TELEMETRY};
use dynamic_tta::harness::RunConfig;

fn dtta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtta")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.source_samples = 400;
    cfg.train_epochs = 5;
    cfg.n_segments = 2;
    cfg.segment_length = 20;
    cfg.seeds = vec![0, 1];
    cfg.lr_multipliers = vec![0.5, 2.0];
    cfg.retrieval_sizes = vec![4, 12];
    cfg.n_orders = 2;
    let path = dir.join("small.cfg");
    fs::write(&path, cfg.to_text()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn telemetry(dir: &Path) -> Table {
    Table::read(fs::File::open(dir.join("telemetry.csv")).unwrap(), TELEMETRY).unwrap()
}

#[test]
fn train_is_reproducible_and_adapt_uses_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&dtta(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(&a)]));
    ok(&dtta(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(&b)]));
    assert_eq!(fs::read(a.join("model.bin")).unwrap(), fs::read(b.join("model.bin")).unwrap());
    assert!(Table::load(a.join("train_log.csv")).unwrap().rows.len() == 5);
    let manifest = Manifest::parse(&fs::read_to_string(a.join("manifest.txt")).unwrap()).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seeds, vec![3]);
    assert!(manifest.outputs.iter().any(|o| o.name == "model.bin"));

    let run = tmp.path().join("run");
    let model = a.join("model.bin");
    ok(&dtta(&["adapt", "--config", s(&cfg), "--model", s(&model), "--method", "fixed", "--out", s(&run)]));
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains(&format!("# input {} sha256=", model.display())));
}

#[test]
fn default_training_generalises() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    ok(&dtta(&["train", "--seed", "0", "--out", s(&out)]));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train_summary.json")).unwrap()).unwrap();
    assert!(summary["validation_accuracy"].as_f64().unwrap() >= 0.97, "{summary}");
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let text = RunConfig::default().to_text();
    let missing: String = text
        .lines()
        .filter(|l| !l.starts_with("retrieval_size "))
        .map(|l| format!("{l}\n"))
        .collect();
    let path = tmp.path().join("bad.cfg");
    fs::write(&path, missing).unwrap();
    let out = dtta(&["train", "--config", s(&path), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("retrieval_size"));

    fs::write(&path, format!("{text}warmup = 3\n")).unwrap();
    let out = dtta(&["adapt", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));

    let out = dtta(&["adapt", "--method", "tent", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("none, ptbn, fixed, dltta"), "{err}");

    let out = dtta(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("model.bin");
    fs::write(&bogus, b"not a model").unwrap();
    let out = dtta(&["adapt", "--model", s(&bogus), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn adapt_telemetry_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let mut tables = Vec::new();
    for method in ["none", "fixed", "dltta"] {
        let dir = tmp.path().join(method);
        ok(&dtta(&["adapt", "--config", s(&cfg), "--method", method, "--seed", "4", "--out", s(&dir)]));
        let metrics = read_metrics_json(dir.join("metrics.json")).unwrap();
        assert_eq!(metrics.steps, 40);
        tables.push(telemetry(&dir));
    }
    let none = &tables[0];
    assert!(none.column_f64("applied_lr").unwrap().iter().all(|&v| v == 0.0));

    let dltta = &tables[2];
    let lrs = dltta.column_f64("applied_lr").unwrap();
    let bank = dltta.column_f64("bank_size").unwrap();
    for (lr, b) in lrs.iter().zip(&bank) {
        if *b < 12.0 {
            assert_eq!(*lr, 0.05);
        }
    }
    assert_ne!(lrs[5], 0.05);

    let fixed = &tables[1];
    assert_eq!(fixed.column("severity").unwrap(), dltta.column("severity").unwrap());
    assert_ne!(fixed.column("applied_lr").unwrap(), dltta.column("applied_lr").unwrap());
}

#[test]
fn manifest_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = tmp.path().join("first");
    ok(&dtta(&["adapt", "--config", s(&cfg), "--seed", "2", "--out", s(&first)]));
    let second = tmp.path().join("second");
    let manifest = first.join("manifest.txt");
    ok(&dtta(&["adapt", "--config", s(&manifest), "--out", s(&second)]));
    assert_eq!(
        fs::read(first.join("telemetry.csv")).unwrap(),
        fs::read(second.join("telemetry.csv")).unwrap()
    );
}

#[test]
fn experiment_commands_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    for (cmd, file) in [
        ("compare", "runs.csv"),
        ("sweep-lr", "sweep_lr_summary.csv"),
        ("order-study", "order_summary.csv"),
        ("retrieval-sweep", "retrieval_summary.csv"),
    ] {
        let dir = tmp.path().join(cmd);
        ok(&dtta(&[cmd, "--config", s(&cfg), "--out", s(&dir)]));
        let table = Table::load(dir.join(file)).unwrap();
        assert!(!table.rows.is_empty(), "{cmd}");
        assert!(dir.join("manifest.txt").exists());
    }
    let runs = Table::load(tmp.path().join("compare/runs.csv")).unwrap();
    assert_eq!(runs.rows.len(), 8);
    let sweep = Table::load(tmp.path().join("sweep-lr/sweep_lr_summary.csv")).unwrap();
    assert_eq!(sweep.rows.len(), 4);
}

#[test]
fn emit_plots_from_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&dtta(&["adapt", "--config", s(&cfg), "--method", "fixed", "--out", s(&a)]));
    ok(&dtta(&["adapt", "--config", s(&cfg), "--method", "dltta", "--out", s(&b)]));
    let plots = tmp.path().join("plots");
    let ta = a.join("telemetry.csv");
    let tb = b.join("telemetry.csv");
    ok(&dtta(&["emit-plots", s(&ta), s(&tb), "--out", s(&plots)]));
    let script = fs::read_to_string(plots.join("plot_loss_curves.py")).unwrap();
    assert!(script.contains(s(&ta)) && script.contains(s(&tb)));

    let broken = tmp.path().join("broken.csv");
    let text = fs::read_to_string(&ta).unwrap().replacen("tta_loss", "loss", 1);
    fs::write(&broken, text).unwrap();
    let out = dtta(&["emit-plots", s(&broken), "--out", s(&plots)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tta_loss"));
}
