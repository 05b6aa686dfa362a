//! End-to-end runs of the `handwash` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn handwash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handwash"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("HANDWASH_CACHE", "/nonexistent/handwash-cache")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = handwash(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a small corpus, extracts it with `stride` and splits it.
fn prepared(root: &Path, frames: usize, stride: usize) -> PathBuf {
    let (clips, data) = (root.join("clips"), root.join("data"));
    ok(&["fixtures", "--out", s(&clips), "--per-class", "2", "--frames", &frames.to_string()]);
    ok(&["extract", "--corpus", s(&clips), "--out", s(&data), "--stride", &stride.to_string()]);
    let manifest = data.join("manifest.jsonl");
    ok(&["split", "--manifest", s(&manifest), "--val-fraction", "0.25", "--seed", "0"]);
    manifest
}

fn train(manifest: &Path, run: &Path, epochs: usize) {
    ok(&[
        "train", "--manifest", s(manifest), "--out", s(run), "--backbone", "stub", "--feature-dim", "32",
        "--epochs", &epochs.to_string(), "--seed", "4",
    ]);
}

fn sample_lines(manifest: &Path) -> Vec<Value> {
    fs::read_to_string(manifest)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn extract_writes_one_sample_per_stride_step() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 100, 5);
    let samples = sample_lines(&manifest);
    assert_eq!(samples.len(), 3 * 2 * 20);
    assert!(samples.iter().all(|v| v["frame"].as_u64().unwrap() % 5 == 0));
    assert_eq!(samples.iter().filter(|v| v["split"] == "val").count(), 3 * 10);
}

#[test]
fn missing_corpus_exits_with_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = handwash(&["extract", "--corpus", s(&dir.path().join("absent")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));
}

#[test]
fn pretrained_backbone_without_weights_exits_with_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 4, 1);
    let out = handwash(&["train", "--manifest", s(&manifest), "--out", s(&dir.path().join("run")), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights"));
}

#[test]
fn training_is_reproducible_and_writes_a_complete_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 6, 1);
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    train(&manifest, &a, 7);
    train(&manifest, &b, 7);
    for name in ["config.json", "history.json", "curves.png", "model/model.json", "report.json", "report.txt"] {
        assert!(a.join(name).is_file(), "missing {name}");
    }
    assert_eq!(read_json(&a.join("history.json")).as_array().unwrap().len(), 7);
    assert_eq!(fs::read(a.join("history.json")).unwrap(), fs::read(b.join("history.json")).unwrap());
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert!(fs::read(a.join("curves.png")).unwrap().starts_with(b"\x89PNG"));
}

#[test]
fn eval_scores_injected_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let labels = ["FingersInterlaced", "Linear", "Palm2Palm"];
    let matrix = [[14, 0, 0], [0, 14, 0], [12, 1, 0]];
    let mut manifest = vec![json!({"version": 1, "labels": labels}).to_string()];
    let (mut perfect, mut reconstructed) = (Vec::new(), Vec::new());
    for (t, row) in matrix.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for k in 0..n {
                let path = format!("/frames/{}/{t}{p}_{k:05}.jpg", labels[t]);
                manifest.push(
                    json!({"path": path, "label": labels[t], "video": format!("{t}{p}"), "frame": k, "split": null})
                        .to_string(),
                );
                perfect.push(json!({"path": path, "label": labels[t]}).to_string());
                reconstructed.push(json!({"path": path, "label": labels[p]}).to_string());
            }
        }
    }
    let write = |name: &str, lines: &[String]| {
        let p = dir.path().join(name);
        fs::write(&p, lines.join("\n") + "\n").unwrap();
        p
    };
    let manifest = write("manifest.jsonl", &manifest);
    let run = dir.path().join("run");

    let out = dir.path().join("perfect");
    let p = write("perfect.jsonl", &perfect);
    ok(&["eval", "--run", s(&run), "--manifest", s(&manifest), "--predictions", s(&p), "--out", s(&out)]);
    let report = read_json(&out.join("report.json"));
    for row in ["micro_avg", "macro_avg", "weighted_avg"] {
        assert_eq!(report[row]["f1"], 1.0);
    }

    let out = dir.path().join("reconstructed");
    let p = write("reconstructed.jsonl", &reconstructed);
    let table = ok(&["eval", "--run", s(&run), "--manifest", s(&manifest), "--predictions", s(&p), "--out", s(&out)]);
    assert_eq!(table, fs::read_to_string(out.join("report.txt")).unwrap());
    let rows: Vec<Vec<&str>> = table
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .filter(|w| w.len() >= 4)
        .collect();
    let cells = |name: &str| -> Vec<&str> {
        let first = name.split(' ').next().unwrap();
        let row = rows.iter().find(|w| w[0] == first).unwrap();
        row[row.len() - 4..].to_vec()
    };
    assert_eq!(cells("FingersInterlaced"), ["0.54", "1.00", "0.70", "14"]);
    assert_eq!(cells("Linear"), ["0.93", "1.00", "0.97", "14"]);
    assert_eq!(cells("Palm2Palm"), ["0.00", "0.00", "0.00", "13"]);
    assert_eq!(cells("Micro"), ["0.68", "0.68", "0.68", "41"]);
    assert_eq!(cells("Macro"), ["0.49", "0.67", "0.56", "41"]);
    assert_eq!(cells("Weighted"), ["0.50", "0.68", "0.57", "41"]);
}

#[test]
fn predict_writes_a_timeline_and_annotated_stills() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), 4, 1);
    let run = dir.path().join("run");
    train(&manifest, &run, 2);
    let clips = dir.path().join("long");
    ok(&["fixtures", "--out", s(&clips), "--per-class", "1", "--frames", "100", "--seed", "9"]);
    let clip = clips.join("Linear").join("Linear_000.y4m");

    ok(&["predict", "--run", s(&run), "--clip", s(&clip), "--window", "1", "--annotate-frames", "38,60,64"]);
    let out = run.join("predictions").join("Linear_000");
    let timeline = read_json(&out.join("timeline.json"));
    let frames = timeline.as_array().unwrap();
    assert_eq!(frames.len(), 100);
    for f in frames {
        let raw: Vec<f64> = f["raw_probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let best = (0..raw.len()).fold(0, |b, i| if raw[i] > raw[b] { i } else { b });
        let names = ["FingersInterlaced", "Linear", "Palm2Palm"];
        assert_eq!(f["label"], names[best]);
    }
    for i in [38, 60, 64] {
        assert!(out.join(format!("Linear_000_{i:05}_pred.png")).is_file());
    }

    let past_end = handwash(&["predict", "--run", s(&run), "--clip", s(&clip), "--annotate-frames", "200"]);
    assert_eq!(past_end.status.code(), Some(2));

    let two = handwash(&["predict", "--run", s(&run), "--clip", s(&clip), "--labels", "a,b"]);
    assert_eq!(two.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&two.stderr).contains("configuration error"));
}
