use std::path::{Path, PathBuf};
use std::process::Command;

use mmlab::scenario::Scenario;

fn mmlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmlab"))
}

fn bundled() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut files: Vec<PathBuf> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "toml")).collect();
    files.sort();
    files
}

#[test]
fn bundled_scenarios_round_trip() {
    let files = bundled();
    assert!(files.len() >= 2);
    for path in files {
        let sc = Scenario::load(&path).unwrap();
        assert_eq!(Scenario::from_toml(&sc.to_toml().unwrap()).unwrap(), sc, "{}", path.display());
    }
}

#[test]
fn two_point_suite_passes_and_writes_reports() {
    let out = tempfile::tempdir().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/two_point_suite.toml");
    let status = mmlab().arg("run").arg(&path).arg("--out").arg(out.path()).arg("--jobs").arg("2").status().unwrap();
    assert!(status.success());
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.path().join("two_point_suite.json")).unwrap()).unwrap();
    assert_eq!(json["pass"], true);
    assert_eq!(json["reports"].as_array().unwrap().len(), 12);
    let csv = std::fs::read_to_string(out.path().join("two_point_suite__be_at_4.csv")).unwrap();
    assert!(csv.starts_with("grid,residual,residual_is_inf"));
}

#[test]
fn empty_scenario_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, "name = \"empty\"\n[space]\nbuilder = \"path\"\nparams = { n = 3 }\n").unwrap();
    let out = mmlab().arg("run").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("empty.json")).unwrap()).unwrap();
    assert_eq!(json["reports"].as_array().unwrap().len(), 0);
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fail.toml");
    std::fs::write(
        &path,
        "name = \"fail\"\n[space]\nbuilder = \"two_point\"\n[[experiment]]\nid = \"k\"\ncheck = \"be_check\"\nparams = { K = 4.5 }\n",
    )
    .unwrap();
    let out = mmlab().arg("run").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("fail.json").exists());
}

#[test]
fn schema_error_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"bad\"\n[space]\nbuilder = \"two_point\"\nsead = 3\n").unwrap();
    let out = mmlab().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sead") && err.contains("line 4"), "{err}");
}

#[test]
fn one_off_check_prints_report() {
    let out = mmlab()
        .args(["check", "intrinsic_distance", "--space", "degenerate_grid", "--space-param", "rows=3", "--space-param", "cols=2"])
        .args(["--param", "x=0", "--param", "y=3", "--param", "expect=\"inf\""])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["details"]["lower"], "inf");
}

#[test]
fn unknown_check_is_an_error() {
    let out = mmlab().args(["check", "nope", "--space", "two_point"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
