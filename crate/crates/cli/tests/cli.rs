mod common;

use std::path::Path;
use std::process::{Command, Output};

fn ecgres(args: &[&str], extra: &[&Path]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ecgres"));
    c.args(args);
    for p in extra {
        c.arg(p);
    }
    c.output().expect("binary runs")
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(ecgres(&["ingest", "--config"], &[&missing]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, common::config_text(dir.path(), dir.path(), "[readout]\ntau = 1.0\n")).unwrap();
    assert_eq!(ecgres(&["ingest", "--config"], &[&bad]).status.code(), Some(2));
}

#[test]
fn standalone_dataset_and_encode() {
    let dir = tempfile::tempdir().unwrap();
    let db = common::synthetic_db(dir.path(), 3, 5);
    let out = dir.path().join("ds");
    let o = ecgres(&["dataset", "build", "--mini", "--seed", "3", "--records-dir"], &[&db, Path::new("--out"), &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.sig", "validation.sig", "test.sig", "test.intervals.csv", "streams.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let events = dir.path().join("test.aer");
    let o = ecgres(&["encode", "--target-rate", "400", "--in"], &[&out.join("test.sig"), Path::new("--out"), &events]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(events.is_file());

    let o = ecgres(&["encode", "--target-rate", "400", "--in"], &[&dir.path().join("absent.sig"), Path::new("--out"), &events]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn run_without_model_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecgres(
        &["run", "--model"],
        &[&dir.path().join("m/model.json"), Path::new("--events"), &dir.path().join("e.aer"), Path::new("--out"), &dir.path().join("t.csv")],
    );
    assert!(!o.status.success());
    assert_ne!(o.status.code(), Some(1));
}
