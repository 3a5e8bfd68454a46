use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hierrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hierrec")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn config(samples: [usize; 3]) -> Value {
    json!({
        "synthetic": {
            "num_scenarios": 3,
            "num_common_features": 3,
            "cardinality_per_feature": 6,
            "samples_per_split": samples,
            "seed": 3,
            "explicit_strength": 1.0,
            "implicit_strength": 1.0,
            "noise_std": 0.1,
            "base_logit": 0.0,
            "planted_pairs": 1
        },
        "hierrec": {
            "embedding_dim": 4, "num_heads": 2, "global_dim": 8,
            "explicit_out_dim": 6, "implicit_out_dim": 4, "bottleneck_r": 2
        },
        "learning_rate": 0.01,
        "batch_size": 64,
        "max_epochs": 3
    })
}

fn write_config(dir: &Path, value: &Value) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, value.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config([200, 50, 50]));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = hierrec(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in ["train.csv", "val.csv", "test.csv", "report.json", "schema.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let o = hierrec(&["gen-data", "--config", &cfg, "--seed", "9", "--out", b.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(b.join("train.csv")).unwrap());
}

#[test]
fn empty_training_split_is_contract_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config([0, 50, 50]));
    let o = hierrec(&["gen-data", "--config", &cfg, "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config([50, 20, 20]));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = hierrec(&["gen-data", "--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_io_error() {
    let o = hierrec(&["train", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn train_then_eval_matches_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config([400, 150, 150]));
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    assert_eq!(code(&hierrec(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()])), 0);
    let o = hierrec(&["train", "--config", &cfg, "--out", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let log = fs::read_to_string(model.join("train_log.jsonl")).unwrap();
    let entries: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for key in ["epoch", "train_loss", "val_auc", "val_logloss", "wall_time_s"] {
        assert!(entries[0].get(key).is_some(), "{key}");
    }
    let best = entries
        .iter()
        .rfind(|e| e["best"] == true)
        .unwrap()["val_auc"]
        .as_f64()
        .unwrap();

    let ckpt = model.join("model.json");
    let o = hierrec(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        data.join("val.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let report: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert!((report["overall_auc"].as_f64().unwrap() - best).abs() <= 1e-9);

    let o = hierrec(&["dump-attention", "--checkpoint", ckpt.to_str().unwrap(), "--out", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(model.join("attention.csv")).unwrap();
    assert!(csv.starts_with("scenario_id,head,feature,weight"));
    // 3 scenarios x 2 heads x 3 features
    assert_eq!(csv.lines().count(), 1 + 18);

    let o = hierrec(&[
        "bench",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        data.join("test.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let bench: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(bench["entries"][0]["timings_s"].as_array().unwrap().len(), 5);

    let o = hierrec(&[
        "bench",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        data.join("test.csv").to_str().unwrap(),
        "--repetitions",
        "0",
    ]);
    assert_eq!(code(&o), 2);

    // drop the second feature column
    let text = fs::read_to_string(data.join("val.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let dropped = header[2].to_owned();
    let cut: String = text
        .lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.remove(2);
            cells.join(",") + "\n"
        })
        .collect();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, cut).unwrap();
    let o = hierrec(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(&dropped), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config([200, 50, 50]);
    cfg["learning_rate"] = json!(1e300);
    let path = write_config(dir.path(), &cfg);
    let o = hierrec(&["train", "--config", &path, "--out", dir.path().join("m").to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("batch"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_a_flipped_gradient() {
    let o = hierrec(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = hierrec(&["gradcheck", "--flip-sign-of", "implicit_fc.0.weight"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("implicit_fc.0.weight"));
}
