//! The `bwtwin` binary: exit codes, artifacts and database persistence.

use std::path::Path;
use std::process::{Command, Output};

fn bwtwin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwtwin"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bwtwin(args, dir.path()).status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["run", "--scenario", "nope"]), Some(1));
    assert_eq!(code(&["what-if", "--state", "-5"]), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "no_such_field": 2}"#).unwrap();
    assert_eq!(code(&["run", "--config", bad.to_str().unwrap()]), Some(1));
    let missing = dir.path().join("missing.json");
    let o = bwtwin(&["run", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));

    // missing database is a runtime failure, not a usage error
    assert_eq!(code(&["inspect-db"]), Some(2));
}

#[test]
fn generate_writes_both_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = bwtwin(&["generate"], dir.path());
    assert!(o.status.success());
    let traffic = std::fs::read_to_string(dir.path().join("traffic.csv")).unwrap();
    assert_eq!(traffic.lines().count(), 1 + 1800);
    assert!(dir.path().join("telemetry.csv").exists());

    let d = bwtwin(&["generate", "--print-defaults"], dir.path());
    let cfg: serde_json::Value = serde_json::from_slice(&d.stdout).unwrap();
    assert_eq!(cfg["seed"], 7);
}

#[test]
fn what_if_entries_persist() {
    let dir = tempfile::tempdir().unwrap();
    let first = bwtwin(&["what-if", "--state", "100"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("action 100 Kbps"), "{}", stdout(&first));
    let again = bwtwin(&["what-if", "--state", "100"], dir.path());
    assert!(stdout(&again).contains("occurrences 2"), "{}", stdout(&again));

    let db = bwtwin(&["inspect-db"], dir.path());
    assert!(db.status.success());
    let row = stdout(&db)
        .lines()
        .find(|l| l.trim_start().starts_with("100 "))
        .map(str::to_owned)
        .unwrap();
    assert!(row.contains("what_if"), "{row}");
}

#[test]
fn corrupt_database_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("action_db.json"), "{not json").unwrap();
    let o = bwtwin(&["inspect-db"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("action_db.json"));
}
