use std::process::Command;

use sphere_jacobi::report::{Status, VerificationReport};

fn verify() -> Command {
    Command::new(env!("CARGO_BIN_EXE_verify"))
}

#[test]
fn list_prints_catalog() {
    let out = verify().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "identity-s3",
        "hopf",
        "levicivita-ts5",
        "clifford-torus",
        "small-circle-0.6",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn passing_run_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let status = verify()
        .args(["minimal", "--object", "equator-2-3", "--out"])
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = VerificationReport::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(report.all_passed());
    assert!(report.records.iter().all(|r| r.status != Status::Fail));
    assert!(report.records.iter().any(|r| r.check_id.ends_with("rank")));
}

#[test]
fn report_goes_to_stdout_without_out() {
    let out = verify()
        .args(["harmonic", "--object", "constant-s3-s2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report = VerificationReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(report.records.iter().any(|r| r.status == Status::Skipped));
}

#[test]
fn configuration_errors_exit_with_two() {
    let unknown = verify().args(["harmonic", "--object", "torus-knot"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));

    let bad_suite = verify().arg("geodesics").output().unwrap();
    assert_eq!(bad_suite.status.code(), Some(2));

    let mismatched = verify().args(["yang-mills", "--object", "hopf"]).output().unwrap();
    assert_eq!(mismatched.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "suite = minimal\ncolour = blue\n").unwrap();
    let bad_key = verify().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(bad_key.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let path = dir.path().join("r.json");
    std::fs::write(&cfg, "suite = minimal\nobject = clifford-torus\nlevel = 3\n").unwrap();
    let status = verify()
        .arg("--config")
        .arg(&cfg)
        .args(["--object", "equator-2-5", "--level", "1", "--out"])
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = VerificationReport::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(report.records.iter().all(|r| r.check_id.starts_with("equator-2-5/")));
    assert_eq!(report.environment.grids["equator-2-5"].level, 1);
}
