use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dvc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run dvc")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = dvc(args, cwd);
    assert!(
        out.status.success(),
        "dvc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    k.sort();
    k
}

fn synthetic(dir: &Path, videos: &str, seed: &str) {
    ok(&["gen-synthetic", "--videos", videos, "--seed", seed, "--out", "syn"], dir);
}

/// Predictions that copy the first groundtruth set, with scores attached.
fn copy_groundtruth(dir: &Path) {
    let gt = read_json(dir.join("syn/gt1.json"));
    let mut results = serde_json::Map::new();
    for (id, v) in gt.as_object().unwrap() {
        let entries: Vec<Value> = v["timestamps"]
            .as_array()
            .unwrap()
            .iter()
            .zip(v["sentences"].as_array().unwrap())
            .enumerate()
            .map(|(i, (t, s))| {
                serde_json::json!({
                    "timestamp": t,
                    "sentence": s,
                    "proposal_score": 0.5 + 0.1 * (i % 5) as f64,
                    "caption_logprob": -1.0 - i as f64,
                })
            })
            .collect();
        results.insert(id.clone(), Value::Array(entries));
    }
    let file = serde_json::json!({ "version": "VERSION 1.0", "results": results });
    std::fs::write(dir.join("copy.json"), serde_json::to_string(&file).unwrap()).unwrap();
}

#[test]
fn identity_corpus_scores_perfect_proposals() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "10", "1");
    copy_groundtruth(dir.path());
    let stdout = ok(
        &["eval-proposals", "--pred", "copy.json", "--gt", "syn/gt1.json", "--tiou", "0.5"],
        dir.path(),
    );
    assert!(stdout.contains("P=1.0000 R=1.0000"), "{stdout}");
}

#[test]
fn zero_k_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "2", "1");
    let out = dvc(
        &[
            "fuse", "--meta", "syn/meta.json", "--scores", "syn/heuristic_scores.json", "--k", "0", "--out", "p.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be ≥ 1"));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dvc(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dvc(&["eval-proposals", "--pred", "none.json", "--gt", "none.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let out = dvc(&["eval-proposals", "--pred", "bad.json", "--gt", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_threshold_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "2", "1");
    copy_groundtruth(dir.path());
    let out = dvc(
        &["eval-proposals", "--pred", "copy.json", "--gt", "syn/gt1.json", "--tiou", "1.5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tiou"));
}

#[test]
fn gen_synthetic_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synthetic(a.path(), "50", "7");
    synthetic(b.path(), "50", "7");
    let mut files: Vec<_> = walk(&a.path().join("syn"));
    files.sort();
    assert!(files.len() > 5);
    for rel in files {
        let x = std::fs::read(a.path().join("syn").join(&rel)).unwrap();
        let y = std::fs::read(b.path().join("syn").join(&rel)).unwrap();
        assert_eq!(x, y, "{} differs", rel.display());
    }
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path).into_iter().map(|p| Path::new(path.file_name().unwrap()).join(p)));
        } else {
            out.push(path.file_name().unwrap().into());
        }
    }
    out
}

#[test]
fn fuse_output_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), "20", "3");
    let base = ["fuse", "--meta", "syn/meta.json", "--scores", "syn/heuristic_scores.json"];
    ok(&[&base[..], &["--out", "one.json"]].concat(), dir.path());
    ok(&[&base[..], &["--out", "four.json", "--jobs", "4"]].concat(), dir.path());
    assert_eq!(
        std::fs::read(dir.path().join("one.json")).unwrap(),
        std::fs::read(dir.path().join("four.json")).unwrap()
    );
    let stdout = ok(
        &["eval-proposals", "--pred", "one.json", "--gt", "syn/gt1.json", "--tiou", "0.5"],
        dir.path(),
    );
    assert!(stdout.contains("R=1.0000"), "{stdout}");
}

#[test]
fn fuse_replays_score_tables() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("meta.json"), r#"{"v": {"duration": 30.0}}"#).unwrap();
    let scores = r#"{
        "mode": "tables",
        "videos": {"v": {
            "candidates": [[0, 10], [10, 20], [20, 30]],
            "scores": [0.9, 0.5, 0.4],
            "steps": [[0.2, 0.5, 0.2, 0.1], [0.3, 0.1, 0.6]]
        }}
    }"#;
    std::fs::write(dir.path().join("scores.json"), scores).unwrap();
    for (k, expected) in [("1", vec![[10.0, 20.0]]), ("2", vec![[10.0, 20.0], [0.0, 10.0]])] {
        ok(
            &["fuse", "--meta", "meta.json", "--scores", "scores.json", "--k", k, "--out", "p.json"],
            dir.path(),
        );
        let p = read_json(dir.path().join("p.json"));
        let got: Vec<[f64; 2]> = p["results"]["v"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| serde_json::from_value(e["timestamp"].clone()).unwrap())
            .collect();
        assert_eq!(got, expected, "k = {k}");
    }
}

#[test]
fn invalid_score_table_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("meta.json"), r#"{"v": {"duration": 30.0}}"#).unwrap();
    let scores = r#"{"mode": "tables", "videos": {"v": {
        "candidates": [[0, 10]], "scores": [0.9], "steps": [[0.5, 0.2]]}}}"#;
    std::fs::write(dir.path().join("scores.json"), scores).unwrap();
    let out = dvc(
        &["fuse", "--meta", "meta.json", "--scores", "scores.json", "--out", "p.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d, "8", "5");
    copy_groundtruth(d);

    ok(&["eval-proposals", "--pred", "copy.json", "--gt", "syn/gt1.json", "--out", "pr.json"], d);
    let pr = read_json(d.join("pr.json"));
    assert_eq!(
        keys(&pr),
        [
            "avg_proposals_per_video",
            "n_videos",
            "per_video",
            "precision",
            "recall",
            "thresholds",
            "zero_prediction_videos"
        ]
    );
    assert_eq!(pr["thresholds"].as_array().unwrap().len(), 4);

    ok(&["eval-captions", "--pred", "copy.json", "--gt", "syn/gt1.json", "--out", "cap.json"], d);
    let cap = read_json(d.join("cap.json"));
    for key in ["BLEU", "BLEU_smoothed", "BLEU_corpus", "CIDEr", "per_threshold", "thresholds"] {
        assert!(cap.get(key).is_some(), "missing {key}");
    }
    let first = &cap["per_threshold"][0];
    for key in ["tiou", "BLEU", "CIDEr", "matched", "unmatched"] {
        assert!(first.get(key).is_some(), "missing per-threshold {key}");
    }

    ok(&["eval-diversity", "--pred", "copy.json", "--out", "div.json"], d);
    let div = read_json(d.join("div.json"));
    for key in ["SelfB", "RE", "SelfB2", "RE2", "n", "per_video"] {
        assert!(div.get(key).is_some(), "missing {key}");
    }

    ok(&["rerank-proposals", "--pred", "copy.json", "--meta", "syn/meta.json", "--top", "2", "--out", "rr.json"], d);
    let rr = read_json(d.join("rr.json"));
    assert_eq!(rr["version"], "VERSION 1.0");
    for entries in rr["results"].as_object().unwrap().values() {
        assert!(entries.as_array().unwrap().len() <= 2);
    }

    ok(&["augment", "--pred", "copy.json", "--gt", "syn/gt1.json", "--out", "aug.json"], d);
    let aug = read_json(d.join("aug.json"));
    let pair = &aug.as_object().unwrap().values().next().unwrap()[0];
    assert_eq!(keys(pair), ["caption", "gt_index", "interval", "tiou"]);
    assert_eq!(pair["tiou"], 1.0);

    ok(&["contexts", "--gt", "syn/gt1.json", "--features", "syn/features", "--out", "ctx.json"], d);
    let ctx = read_json(d.join("ctx.json"));
    let bundle = &ctx.as_object().unwrap().values().next().unwrap()[0];
    for key in ["event_index", "event_range", "local_before", "local_after", "global_mask", "neighbor_events", "pooled"] {
        assert!(bundle.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn concept_training_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic(d, "10", "2");
    copy_groundtruth(d);
    let train = [
        "concepts", "train", "--gt", "syn/gt1.json", "--features", "syn/features", "--lexicon", "syn/lexicon.json",
        "--epochs", "5",
    ];
    ok(&[&train[..], &["--out", "m.bin", "--loss-trace", "loss.json"]].concat(), d);
    ok(&[&train[..], &["--out", "m2.bin"]].concat(), d);
    assert_eq!(std::fs::read(d.join("m.bin")).unwrap(), std::fs::read(d.join("m2.bin")).unwrap());
    assert_eq!(read_json(d.join("loss.json")).as_array().unwrap().len(), 5);

    ok(
        &[
            "concepts", "predict", "--model", "m.bin", "--features", "syn/features", "--meta", "syn/meta.json", "--pred",
            "copy.json", "--top", "3", "--out", "c.json",
        ],
        d,
    );
    let c = read_json(d.join("c.json"));
    let first = &c["results"].as_object().unwrap().values().next().unwrap()[0];
    assert_eq!(first["concepts"].as_array().unwrap().len(), 3);

    let out = dvc(&[&train[..], &["--out", "m3.bin", "--batch", "0"]].concat(), d);
    assert_eq!(out.status.code(), Some(1));
}
