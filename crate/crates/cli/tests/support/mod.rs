#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_retinn");

pub fn retinn(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("RETINN_WORKERS")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) {
    let out = retinn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every file under `dir`, with manifests stripped of their timing field.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = std::fs::read(&p).unwrap();
            if p.to_string_lossy().ends_with("manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_clock_seconds");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

pub fn pipeline(dir: &Path) {
    ok(dir, &["synth", "--n", "240", "--seed", "7", "--unreliable-fraction", "0.1", "--out", "exams.jsonl"]);
    ok(dir, &["split", "--data", "exams.jsonl", "--split-seed", "2", "--out-dir", "split"]);
    let training = [
        "--data", "exams.jsonl", "--split-seed", "2", "--arch", "compact", "--max-epochs", "2", "--batch-size", "16",
        "--seeds", "1,2",
    ];
    let mut train = vec!["train", "--alpha", "0", "--beta", "0", "--gamma", "5", "--out", "basic"];
    train.extend(training);
    ok(dir, &train);
    let mut grid = vec!["grid", "--grid", "0.25:0.5,0.75:0.5", "--include-basic", "--out", "registry"];
    grid.extend(training);
    ok(dir, &grid);
    ok(dir, &["ensemble", "--registry", "registry", "--val-data", "split/val.jsonl", "--out", "ensemble.json"]);
    ok(dir, &["eval", "--model", "basic/model.ckpt", "--data", "split/test.jsonl", "--report", "basic_report"]);
    ok(
        dir,
        &["eval", "--ensemble", "ensemble.json", "--registry", "registry", "--data", "split/test.jsonl", "--report", "ens_report"],
    );
    ok(dir, &["predict", "--model", "basic/model.ckpt", "--rnfl-file", "split/test.jsonl", "--out", "pred.jsonl"]);
    ok(
        dir,
        &["predict", "--ensemble", "ensemble.json", "--registry", "registry", "--rnfl-file", "split/test.jsonl", "--out", "ens_pred.jsonl"],
    );
    ok(dir, &["plot-data", "--data", "exams.jsonl", "--registry", "registry", "--out-dir", "plots"]);
}
