use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kdslu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdslu")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = kdslu(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn end_to_end_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("small.json"),
        r#"{"n_train": 150, "n_valid": 10, "n_test": 60, "seed": 3}"#,
    )
    .unwrap();
    let data = d.join("data");
    ok(&["corpus", "generate", "--config", &p(d, "small.json"), "--out", data.to_str().unwrap()]);
    for name in ["train", "test"] {
        ok(&["corpus", "render", "--input", &p(&data, &format!("{name}.jsonl")), "--out", &p(&data, &format!("{name}_frames.jsonl"))]);
    }
    let first = fs::read_to_string(data.join("train_frames.jsonl")).unwrap();
    assert!(first.lines().next().unwrap().contains("\"frames\""));

    let (train, test) = (p(&data, "train.jsonl"), p(&data, "test.jsonl"));
    ok(&["teacher", "train", "--variant", "teacher", "--train", &train, "--test", &test, "--epochs", "2", "--out", &p(d, "teacher.json"), "--result", &p(d, "teacher_run.json")]);
    ok(&["teacher", "export-logits", "--checkpoint", &p(d, "teacher.json"), "--data", &train, "--out", &p(d, "t.jsonl")]);
    ok(&["teacher", "export-logits", "--checkpoint", &p(d, "teacher.json"), "--data", &train, "--out", &p(d, "t2.jsonl")]);
    assert_eq!(fs::read(d.join("t.jsonl")).unwrap(), fs::read(d.join("t2.jsonl")).unwrap());
    assert_eq!(fs::read_to_string(d.join("t.jsonl")).unwrap().lines().count(), 150);

    let (ftrain, ftest) = (p(&data, "train_frames.jsonl"), p(&data, "test_frames.jsonl"));
    let out = ok(&[
        "distill", "run", "--train", &ftrain, "--test", &ftest, "--teacher-logits", &p(d, "t.jsonl"),
        "--gamma", "teacher", "--distance", "mae", "--schedule", "exp", "--epochs", "2", "--seed", "4",
        "--out", &p(d, "student.json"), "--result", &p(d, "run.json"), "--log", &p(d, "log.csv"),
    ]);
    assert!(out.starts_with("test_err "));
    let log = fs::read_to_string(d.join("log.csv")).unwrap();
    assert!(log.lines().next().unwrap().contains("l_ce,l_kd,alpha,beta,total"));
    assert_eq!(log.lines().count(), 3);

    let rates: serde_json::Value = serde_json::from_str(&ok(&["eval", "--checkpoint", &p(d, "student.json"), "--data", &ftest])).unwrap();
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run.json")).unwrap()).unwrap();
    assert_eq!(rates["full"], run["test"]["full"]);

    let clean: serde_json::Value = serde_json::from_str(&ok(&["eval", "--checkpoint", &p(d, "teacher.json"), "--data", &test])).unwrap();
    let zero: serde_json::Value = serde_json::from_str(&ok(&["baseline", "pipeline", "--checkpoint", &p(d, "teacher.json"), "--data", &test, "--rate", "0"])).unwrap();
    assert_eq!(clean, zero);

    // Hybrid without professor logits is a hard error.
    let bad = kdslu(&["distill", "run", "--train", &ftrain, "--test", &ftest, "--teacher-logits", &p(d, "t.jsonl"), "--gamma", "hybrid", "--epochs", "1", "--out", &p(d, "x.json")]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("professor"));
}

#[test]
fn grid_run_writes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = r#"{
        "corpus": {"n_train": 120, "n_valid": 10, "n_test": 40, "seed": 2},
        "teacher": {"epochs": 1},
        "seeds": [1, 2],
        "threads": 1,
        "cells": [
            {"config": {"distance": "mae", "gamma_mode": "none", "schedule": {"kind": "fixed", "beta": 0.0}, "epochs": 1, "hidden": 8}},
            {"config": {"distance": "mse", "gamma_mode": "teacher", "schedule": {"kind": "err"}, "epochs": 1, "hidden": 8}, "seeds": [5]}
        ]
    }"#;
    fs::write(d.join("grid.json"), cfg).unwrap();
    let out = d.join("out");
    ok(&["grid", "run", "--config", &p(d, "grid.json"), "--out", out.to_str().unwrap()]);
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines[0], "config_hash,seed,distance,gamma_mode,schedule,fraction,test_err,converged,wall_s");
    assert_eq!(lines.len(), 4);
    assert!(out.join("aggregate.csv").exists());
}

#[test]
fn hard_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = p(tmp.path(), "nope.jsonl");
    let out = kdslu(&["eval", "--checkpoint", &missing, "--data", &missing]);
    assert!(!out.status.success());
    assert!(!kdslu(&["grid", "run", "--out", tmp.path().to_str().unwrap()]).status.success());
    assert!(!kdslu(&["distill", "run", "--train", &missing, "--test", &missing, "--schedule", "cosine", "--out", &missing]).status.success());
}
