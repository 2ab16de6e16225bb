//! End-to-end runs of the `ahead` binary on a small generated bundle.

use std::path::Path;
use std::process::{Command, Output};

fn ahead(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ahead"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ahead(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"{
  "node_types": [
    {"name": "news", "num_nodes": 30, "attr_dim": 9, "views": 3},
    {"name": "source", "num_nodes": 12, "attr_dim": 6, "views": 2}
  ],
  "relations": [{"name": "publishes", "src": "source", "dst": "news", "density": 0.2}],
  "anomaly_ratio": 0.1,
  "seed": 1
}"#;

const SMALL_MODEL: [&str; 6] = ["--epochs", "8", "--hidden", "8", "--outdim", "4"];

fn prepared() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cfg.json"), SMALL).unwrap();
    ok(d, &["generate", "--config", "cfg.json", "--out", "clean", "--seed", "4"]);
    ok(d, &[
        "inject", "--in", "clean", "--out", "data", "--attr-n", "news=2,source=1", "--attr-k", "5",
        "--struct-m", "4", "--struct-c", "1", "--struct-relation", "publishes", "--seed", "2",
    ]);
    tmp
}

#[test]
fn generate_inject_train_score_eval() {
    let tmp = prepared();
    let d = tmp.path();
    assert!(d.join("data/labels.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("data/injection.json")).unwrap()).unwrap();
    assert_eq!(report["attribute"].as_array().unwrap().len(), 3);
    assert_eq!(report["cliques"].as_array().unwrap().len(), 1);

    let mut train = vec!["train", "--data", "data", "--out", "m.bin"];
    train.extend(SMALL_MODEL);
    ok(d, &train);
    ok(d, &["score", "--data", "data", "--model", "m.bin", "--out", "s1.csv"]);
    ok(d, &["score", "--data", "data", "--model", "m.bin", "--out", "s2.csv"]);
    assert_eq!(std::fs::read(d.join("s1.csv")).unwrap(), std::fs::read(d.join("s2.csv")).unwrap());
    let scores = std::fs::read_to_string(d.join("s1.csv")).unwrap();
    assert_eq!(scores.lines().count(), 43);

    ok(d, &["eval", "--scores", "s1.csv", "--labels", "data/labels.csv", "--out", "m.json", "--plot", "auc.svg"]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    for key in ["auc", "auc_by_kind", "n_anomalies", "n_nodes", "seed", "config", "wall_seconds"] {
        assert!(m.get(key).is_some(), "metrics.json lacks {key}");
    }
    assert_eq!(m["n_nodes"], 42);
    assert_eq!(m["n_anomalies"]["total"], 7);
    assert!(std::fs::read_to_string(d.join("auc.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn split_views_rewrites_the_schema() {
    let tmp = prepared();
    let d = tmp.path();
    let out = ok(d, &["split-views", "--in", "data", "--views", "news=2", "--seed", "3", "--out", "split"]);
    assert!(out.contains("news: views [5, 4]"), "{out}");
    assert!(out.contains("source: views [3, 3]"), "{out}");
    // Labels travel with the bundle.
    assert!(d.join("split/labels.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = prepared();
    let d = tmp.path();
    assert_eq!(ahead(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(ahead(d, &["train", "--data", "missing", "--out", "m.bin"]).status.code(), Some(2));
    assert_eq!(
        ahead(d, &["generate", "--preset", "nonexistent", "--out", "x"]).status.code(),
        Some(1)
    );
    let mut train = vec!["train", "--data", "data", "--out", "m.bin"];
    train.extend(SMALL_MODEL);
    ok(d, &train);
    let bad = ahead(d, &[
        "score", "--data", "data", "--model", "m.bin", "--out", "s.csv", "--lambda1", "0.9", "--lambda2", "0.9",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    // A model is tied to the schema it was trained on.
    let split = ahead(d, &["split-views", "--in", "data", "--views", "news=2", "--out", "other"]);
    assert!(split.status.success());
    assert_eq!(
        ahead(d, &["score", "--data", "other", "--model", "m.bin", "--out", "s.csv"]).status.code(),
        Some(2)
    );
}

#[test]
fn gradcheck_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--seed", "1", "--samples", "40"]);
    assert!(out.contains("max relative error"));
}

#[test]
fn experiment_commands_emit_reports() {
    let tmp = prepared();
    let d = tmp.path();
    let mut args = vec!["ablate", "--data", "data", "--out", "abl", "--seeds", "0"];
    args.extend(SMALL_MODEL);
    let out = ok(d, &args);
    for v in ["full", "minus_structure", "minus_attribute", "minus_node_type"] {
        assert!(out.contains(v), "{out}");
    }
    assert!(d.join("abl/ablation.csv").exists() && d.join("abl/ablation.svg").exists());

    let mut args = vec!["sweep", "--data", "data", "--kind", "depth", "--grid", "1,2", "--out", "sw", "--seeds", "0"];
    args.extend(SMALL_MODEL);
    ok(d, &args);
    let csv = std::fs::read_to_string(d.join("sw/sweep_depth.csv")).unwrap();
    assert!(csv.lines().count() >= 3, "{csv}");

    let mut args = vec![
        "robust", "--data", "clean", "--out", "rb", "--attr-n", "news=1", "--attr-k", "4", "--struct-m", "2",
        "--struct-c", "1", "--struct-relation", "publishes", "--factors", "1,2", "--seeds", "0",
    ];
    args.extend(SMALL_MODEL);
    let out = ok(d, &args);
    assert!(out.contains("spread"));
}
