//! End-to-end tests of the convboost binary: artifact layouts, determinism,
//! exit codes, and agreement with the library's in-process results.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convboost_core::dataio::load_dataset;
use convboost_core::gbt::BoostConfig;
use convboost_core::pipeline::{train_hybrid, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_convboost"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// 12 images, 3 classes, 16x16: enough to exercise every stage in well
/// under a second per command.
fn synth_tiny(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join("ds");
    run_ok(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--per-class",
        "4",
        "--classes",
        "3",
        "--side",
        "16",
    ]);
    out
}

/// Flags matching [`tiny_config`]; keep the two in sync.
fn tiny_flags<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "--data",
        data,
        "--out",
        out,
        "--seed",
        "9",
        "--side",
        "16",
        "--test-fraction",
        "0.25",
        "--no-augment",
        "--epochs",
        "1",
        "--batch-size",
        "2",
        "--lr",
        "0.01",
        "--n-estimators",
        "4",
        "--max-depth",
        "2",
    ]
}

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 9,
        target_side: 16,
        test_fraction: 0.25,
        augment: false,
        epochs: 1,
        batch_size: 2,
        learning_rate: 0.01,
        boost: BoostConfig {
            n_estimators: 4,
            max_depth: 2,
            ..BoostConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

/// Byte-compares two directory trees.
fn assert_dirs_equal(a: &Path, b: &Path) {
    let list = |d: &Path| {
        let mut names: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        names
    };
    assert_eq!(list(a), list(b), "{:?} vs {:?}", a, b);
    for name in list(a) {
        let (pa, pb) = (a.join(&name), b.join(&name));
        if pa.is_dir() {
            assert_dirs_equal(&pa, &pb);
        } else {
            assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap(), "{:?}", pa);
        }
    }
}

#[test]
fn synth_is_deterministic_and_creates_missing_dirs() {
    let dir = tempfile::tempdir().unwrap();
    // Nested path that does not exist yet.
    let a = dir.path().join("deep/nested/a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run_ok(&[
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "7",
            "--per-class",
            "3",
            "--classes",
            "2",
            "--side",
            "16",
        ]);
    }
    assert!(a.join("manifest.csv").is_file());
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 6);
    assert_dirs_equal(&a, &b);

    let ds = load_dataset(&a.join("manifest.csv")).unwrap();
    assert_eq!(ds.len(), 6);
    assert_eq!(ds.class_names().len(), 2);
}

#[test]
fn synth_rejects_single_class_with_named_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--classes",
        "1",
    ]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("class_count"), "stderr: {}", stderr);
}

#[test]
fn train_cnn_writes_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_tiny(dir.path(), 9);
    let model_dir = dir.path().join("model");
    let manifest = ds.join("manifest.csv");
    let mut args = vec!["train", "--mode", "cnn"];
    args.extend(tiny_flags(manifest.to_str().unwrap(), model_dir.to_str().unwrap()));
    run_ok(&args);

    for name in ["config.json", "model.json", "network.json", "network.bin", "history.csv", "metrics.json"] {
        assert!(model_dir.join(name).is_file(), "missing {}", name);
    }
    assert!(!model_dir.join("ensemble.json").exists(), "cnn mode has no booster");

    let history = fs::read_to_string(model_dir.join("history.csv")).unwrap();
    assert_eq!(
        history.lines().next(),
        Some("epoch,train_loss,train_acc,val_loss,val_acc,lr")
    );
    assert_eq!(history.lines().count(), 2, "header plus one epoch");

    // Every JSON artifact embeds the resolved config and seed.
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(model_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], 9);
    assert_eq!(metrics["config"]["epochs"], 1);
    assert_eq!(metrics["config"]["augment"], false);
    assert!(metrics["metrics"]["accuracy"].is_f64() || metrics["metrics"]["accuracy"].is_number());

    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(model_dir.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["mode"], "cnn");
    assert_eq!(model["seed"], 9);
    assert_eq!(model["target_side"], 16);
    assert_eq!(model["class_names"].as_array().unwrap().len(), 3);

    let config: ExperimentConfig =
        serde_json::from_str(&fs::read_to_string(model_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(config, tiny_config());
}

#[test]
fn train_hybrid_writes_booster_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_tiny(dir.path(), 9);
    let manifest = ds.join("manifest.csv");
    let model_dir = dir.path().join("model");
    let mut args = vec!["train", "--mode", "hybrid"];
    args.extend(tiny_flags(manifest.to_str().unwrap(), model_dir.to_str().unwrap()));
    run_ok(&args);

    for name in [
        "config.json",
        "model.json",
        "network.json",
        "network.bin",
        "ensemble.json",
        "history.csv",
        "metrics.json",
    ] {
        assert!(model_dir.join(name).is_file(), "missing {}", name);
    }

    // Idempotence: rerunning over the same directory reproduces every byte.
    let before: Vec<(String, Vec<u8>)> = fs::read_dir(&model_dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    run_ok(&args);
    for (name, bytes) in before {
        assert_eq!(fs::read(model_dir.join(&name)).unwrap(), bytes, "{} changed", name);
    }
}

#[test]
fn train_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_tiny(dir.path(), 9);
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"epochs": 1, "bogus_knob": 3}"#).unwrap();
    let out = run(&[
        "train",
        "--mode",
        "cnn",
        "--data",
        ds.join("manifest.csv").to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus_knob"), "stderr: {}", stderr);
}

#[test]
fn train_missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--mode",
        "cnn",
        "--data",
        dir.path().join("absent.csv").to_str().unwrap(),
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn compare_is_deterministic_and_echoes_paper_order() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_tiny(dir.path(), 9);
    let manifest = ds.join("manifest.csv");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["compare"];
        args.extend(tiny_flags(manifest.to_str().unwrap(), out.to_str().unwrap()));
        run_ok(&args);
    }
    for name in ["config.json", "report.json", "summary.csv", "history_cnn.csv", "history_c_xgboost.csv"] {
        assert!(a.join(name).is_file(), "missing {}", name);
    }
    assert_dirs_equal(&a, &b);

    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next(),
        Some("model,accuracy,macro_sensitivity,macro_specificity,macro_f1")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("cnn,"));
    assert!(rows[1].starts_with("c_xgboost,"));
    for row in rows {
        assert_eq!(row.split(',').count(), 5, "model plus four metrics: {}", row);
    }

    // --paper-order flows into the report's embedded config.
    let c = dir.path().join("c");
    let mut args = vec!["compare", "--paper-order", "--copies", "1"];
    let mut flags = tiny_flags(manifest.to_str().unwrap(), c.to_str().unwrap());
    flags.retain(|f| *f != "--no-augment");
    args.extend(flags);
    run_ok(&args);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(c.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["paper_order"], true);
    assert_eq!(report["seed"], 9);
    assert_eq!(report["models"][0]["name"], "cnn");
    assert_eq!(report["models"][1]["name"], "c_xgboost");
}

#[test]
fn predict_matches_in_process_pipeline_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds_dir = synth_tiny(dir.path(), 9);
    let manifest = ds_dir.join("manifest.csv");
    let model_dir = dir.path().join("model");
    let mut args = vec!["train", "--mode", "hybrid"];
    args.extend(tiny_flags(manifest.to_str().unwrap(), model_dir.to_str().unwrap()));
    run_ok(&args);

    let ds = load_dataset(&manifest).unwrap();
    let (model, _, _) = train_hybrid(&ds, &tiny_config()).unwrap();

    for sample in ds.samples().iter().step_by(5) {
        let image = ds_dir.join(format!("images/{}.pgm", sample.id()));
        let out = run_ok(&["predict", "--model", model_dir.to_str().unwrap(), "--image", image.to_str().unwrap()]);
        let printed: serde_json::Value =
            serde_json::from_slice(&out.stdout).expect("prediction is JSON");

        let (class, probs) = model.predict(sample).unwrap();
        assert_eq!(printed["class"], class.as_str(), "sample {}", sample.id());
        let printed_probs: Vec<f64> = printed["probabilities"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        // float_roundtrip serialization makes this comparison exact.
        assert_eq!(printed_probs, probs, "sample {}", sample.id());
        let sum: f64 = printed_probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "probabilities sum to {}", sum);
    }
}

#[test]
fn predict_cnn_mode_reports_valid_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_tiny(dir.path(), 9);
    let manifest = ds.join("manifest.csv");
    let model_dir = dir.path().join("model");
    let mut args = vec!["train", "--mode", "cnn"];
    args.extend(tiny_flags(manifest.to_str().unwrap(), model_dir.to_str().unwrap()));
    run_ok(&args);

    let image = ds.join("images/class1_s0.pgm");
    let out = run_ok(&["predict", "--model", model_dir.to_str().unwrap(), "--image", image.to_str().unwrap()]);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let probs: Vec<f64> = printed["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(probs.len(), 3);
    let sum: f64 = probs.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-9);
    let class = printed["class"].as_str().unwrap();
    assert!(["class0", "class1", "class2"].contains(&class));
}

#[test]
fn predict_corrupt_descriptor_is_a_clear_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_tiny(dir.path(), 9);
    let manifest = ds.join("manifest.csv");
    let model_dir = dir.path().join("model");
    let mut args = vec!["train", "--mode", "hybrid"];
    args.extend(tiny_flags(manifest.to_str().unwrap(), model_dir.to_str().unwrap()));
    run_ok(&args);

    // Truncate the network descriptor.
    let descriptor = model_dir.join("network.json");
    let text = fs::read_to_string(&descriptor).unwrap();
    fs::write(&descriptor, &text[..40]).unwrap();

    let image = ds.join("images/class0_s0.pgm");
    let out = run(&["predict", "--model", model_dir.to_str().unwrap(), "--image", image.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("network.json"), "stderr: {}", stderr);

    // A missing model directory fails the same way.
    let out = run(&["predict", "--model", dir.path().join("absent").to_str().unwrap(), "--image", image.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn threads_env_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth", "--out", dir.path().join("x").to_str().unwrap(), "--per-class", "1", "--classes", "2", "--side", "16"])
        .env("CONVBOOST_THREADS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("CONVBOOST_THREADS"), "stderr: {}", stderr);

    let out = bin()
        .args(["synth", "--out", dir.path().join("y").to_str().unwrap(), "--per-class", "1", "--classes", "2", "--side", "16"])
        .env("CONVBOOST_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}
