use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dreward(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dreward"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dreward(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&read(dir, name)).unwrap()
}

/// Synthetic corpora plus generated scored files in a fresh directory.
fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "synth", "--out-dir", "s", "--train-dialogues", "40", "--test-dialogues", "12",
            "--vocab", "300", "--dim", "8", "--topics", "3", "--seed", "2",
        ],
    );
    ok(p, &["generate", "--corpus", "s/train.txt", "--out", "train.txt", "--seed", "7"]);
    ok(p, &["generate", "--corpus", "s/test.txt", "--out", "test.txt", "--seed", "8"]);
    dir
}

const SMALL: [&str; 8] = ["--dim", "8", "--hidden", "6", "--layers", "1", "--max-epochs", "3"];

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train", "--data", "train.txt", "--emb", "s/embeddings.txt", "--history", "4", "--seed",
        "5", "--out", out,
    ];
    args.extend(SMALL);
    args.extend(extra);
    args
}

#[test]
fn generate_writes_scored_file_and_manifest() {
    let dir = workspace();
    let p = dir.path();
    let text = String::from_utf8(read(p, "train.txt")).unwrap();
    assert!(text.starts_with("# score="));
    let m = json(p, "train.txt.manifest.json");
    assert_eq!(m["subcommand"], "generate");
    assert_eq!(m["seeds"]["seed"], 7);
    assert_eq!(m["inputs"][0]["path"], "s/train.txt");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m.get("timestamp").is_none());
}

#[test]
fn stats_prints_one_json_object() {
    let dir = workspace();
    let out = ok(dir.path(), &["stats", "--corpus", "s/train.txt"]);
    assert_eq!(out.lines().count(), 1);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["num_dialogues"], 40);
    assert!(v["mean_turns"].as_f64().unwrap() >= 4.0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &["generate", "--corpus", "s/train.txt", "--out", "again.txt", "--seed", "7"]);
    assert_eq!(read(p, "train.txt"), read(p, "again.txt"));

    ok(p, &train_args("a.ckpt", &["--dropout", "0.3"]));
    ok(p, &train_args("b.ckpt", &["--dropout", "0.3"]));
    assert_eq!(read(p, "a.ckpt"), read(p, "b.ckpt"));
    assert_eq!(read(p, "a.ckpt.report.jsonl"), read(p, "b.ckpt.report.jsonl"));

    for out in ["a.json", "b.json"] {
        ok(
            p,
            &["evaluate", "--checkpoint", "a.ckpt", "--data", "test.txt", "--seed", "1", "--out", out],
        );
    }
    assert_eq!(read(p, "a.json"), read(p, "b.json"));
}

#[test]
fn manifest_replays_training() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &train_args("m.ckpt", &["--batchnorm", "--learning-rate", "0.01"]));
    let m = json(p, "m.ckpt.manifest.json");
    let config = serde_json::json!({"model": m["config"]["model"], "train": m["config"]["train"]});
    std::fs::write(p.join("replay.json"), config.to_string()).unwrap();
    ok(
        p,
        &[
            "train", "--data", "train.txt", "--emb", "s/embeddings.txt", "--history", "4",
            "--config", "replay.json", "--out", "replay.ckpt",
        ],
    );
    assert_eq!(read(p, "m.ckpt"), read(p, "replay.ckpt"));
    let lines = String::from_utf8(read(p, "m.ckpt.report.jsonl")).unwrap();
    assert!(lines.lines().count() <= 3);
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["valid_mae"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn flags_override_config_file() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(
        p.join("cfg.json"),
        r#"{"model": {"hidden_dim": 5, "num_layers": 2}, "train": {"batch_size": 16}}"#,
    )
    .unwrap();
    ok(p, &train_args("c.ckpt", &["--config", "cfg.json"]));
    let m = json(p, "c.ckpt.manifest.json");
    // --hidden and --layers flags beat the file
    assert_eq!(m["config"]["model"]["hidden_dim"], 6);
    assert_eq!(m["config"]["model"]["num_layers"], 1);
    assert_eq!(m["config"]["train"]["batch_size"], 16);
    assert_eq!(m["config"]["train"]["learning_rate"], 0.001);
}

#[test]
fn predict_prints_a_number_per_dialogue() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &train_args("m.ckpt", &[]));
    let corpus = String::from_utf8(read(p, "s/test.txt")).unwrap();
    let first = corpus.split("\n\n").next().unwrap();
    std::fs::write(p.join("d.txt"), format!("{first}\n")).unwrap();
    let out = ok(p, &["predict", "--checkpoint", "m.ckpt", "--dialogue", "d.txt"]);
    assert_eq!(out.lines().count(), 1);
    assert!(out.trim().parse::<f64>().unwrap().is_finite());
    // recorded embedding reference is used, or an explicit one
    let explicit = ok(
        p,
        &["predict", "--checkpoint", "m.ckpt", "--dialogue", "d.txt", "--emb", "s/embeddings.txt"],
    );
    assert_eq!(out, explicit);
}

#[test]
fn featurize_then_train_from_cache() {
    let dir = workspace();
    let p = dir.path();
    ok(
        p,
        &[
            "featurize", "--data", "train.txt", "--emb", "s/embeddings.txt", "--dim", "8",
            "--history", "4", "--out", "f.bin",
        ],
    );
    ok(
        p,
        &[
            "train", "--features", "f.bin", "--hidden", "6", "--layers", "1", "--max-epochs", "3",
            "--seed", "5", "--out", "cached.ckpt",
        ],
    );
    ok(p, &train_args("direct.ckpt", &[]));
    assert_eq!(read(p, "cached.ckpt.report.jsonl"), read(p, "direct.ckpt.report.jsonl"));
}

#[test]
fn sweep_and_scatter_outputs() {
    let dir = workspace();
    let p = dir.path();
    let mut args = vec![
        "sweep", "--train-data", "train.txt", "--test-data", "test.txt", "--emb",
        "s/embeddings.txt", "--lengths", "1,4", "--runs", "2", "--base-seed", "3", "--out-dir",
        "sw",
    ];
    args.extend(SMALL);
    ok(p, &args);
    let bars = String::from_utf8(read(p, "sw/bars.csv")).unwrap();
    assert_eq!(bars.lines().next(), Some("history_length,mean_r,std_r"));
    assert_eq!(bars.lines().count(), 3);
    let sweep = json(p, "sw/sweep.json");
    let seeds: Vec<u64> = sweep["entries"][0]["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [3, 4]);
    assert_eq!(json(p, "sw/manifest.json")["seeds"]["run_seeds"], serde_json::json!([3, 4]));

    let out = ok(
        p,
        &["export-scatter", "--report", "sw/eval-L4.json", "--sigma", "0.3", "--seed", "9", "--out", "sc.csv"],
    );
    let check: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(check["within_bound"], true);
    let csv = String::from_utf8(read(p, "sc.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x_jittered,predicted"));
    let test_size = String::from_utf8(read(p, "test.txt")).unwrap().matches("# score=").count();
    assert_eq!(csv.lines().count(), test_size + 1);
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

#[test]
fn exit_codes_are_distinct() {
    let dir = workspace();
    let p = dir.path();

    let unknown = dreward(p, &["stats", "--corpus", "s/train.txt", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(error_line(&unknown)["error"], "usage");

    assert_eq!(dreward(p, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(dreward(p, &["generate", "--corpus", "s/train.txt"]).status.code(), Some(2));

    let missing = dreward(p, &["stats", "--corpus", "absent.txt"]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(error_line(&missing)["error"], "io");

    std::fs::write(p.join("bad.txt"), "A: hello\nA: again\nB: x\n").unwrap();
    let bad = dreward(p, &["stats", "--corpus", "bad.txt"]);
    assert_eq!(bad.status.code(), Some(4));
    let e = error_line(&bad);
    assert_eq!(e["error"], "data");
    assert!(e["message"].as_str().unwrap().contains("line 1"));

    let help = dreward(p, &["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn evaluate_rejects_changed_embeddings() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &train_args("m.ckpt", &[]));
    let emb: PathBuf = p.join("s/embeddings.txt");
    let mut text = std::fs::read_to_string(&emb).unwrap();
    text.push_str("extra 0 0 0 0 0 0 0 0\n");
    std::fs::write(&emb, text).unwrap();
    let out = dreward(p, &["evaluate", "--checkpoint", "m.ckpt", "--data", "test.txt", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(4));
}
