//! The `greybox` binary on the bundled demo dataset.

use std::path::Path;
use std::process::{Command, Output};

fn greybox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greybox")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = greybox(args);
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

#[test]
fn demo_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("demo.csv");
    let run = dir.path().join("run");
    ok(&["simulate", "--demo", "--out", s(&data)]);
    assert!(dir.path().join("demo.truth.csv").exists());
    ok(&["fit", "--data", s(&data), "--out", s(&run)]);
    for f in ["anomalies.csv", "report.txt", "tables/ETCH01.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let normal = run.join("normal/ETCH01__chamber_temp__main_etch.txt");
    let fresh = dir.path().join("nm.txt");
    ok(&[
        "normal", "--data", s(&data), "--tool", "ETCH01", "--sensor", "chamber_temp", "--step", "main_etch",
        "--out", s(&fresh),
    ]);
    assert_eq!(std::fs::read(&normal).unwrap(), std::fs::read(&fresh).unwrap());

    let scored = dir.path().join("scores.csv");
    ok(&["score", "--data", s(&data), "--normal", s(&normal), "--out", s(&scored)]);
    assert_eq!(std::fs::read_to_string(&scored).unwrap().lines().count(), 151);

    let report = ok(&["report", "--run", s(&run)]);
    assert!(report.contains("ETCH01-W0110"), "{report}");

    let prefix = dir.path().join("maps/temp");
    ok(&[
        "heatmap", "--table", s(&run.join("tables/ETCH01.csv")), "--sensor", "chamber_temp", "--step", "main_etch",
        "--out", s(&prefix),
    ]);
    assert!(dir.path().join("maps/temp.svg").exists());

    let text = ok(&[
        "deconstruct", "--data", s(&data), "--run", s(&run), "--wafer", "ETCH01-W0110", "--sensor", "chamber_temp",
        "--step", "main_etch",
    ]);
    assert!(text.lines().next().unwrap().starts_with("top contributor: c "), "{text}");
}

#[test]
fn missing_input_exits_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = greybox(&["fit", "--data", "/nonexistent/data.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_flag_exits_with_status_one() {
    assert_eq!(greybox(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(greybox(&["no-such-command"]).status.code(), Some(1));
}
