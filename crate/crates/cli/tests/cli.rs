use std::path::Path;
use std::process::Command;

use rdlab_cli::{catalog, AuditId, AuditSpec, ScenarioConfig};
use serde_json::Value;

fn rdlab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_rdlab")).args(args).output().expect("spawn rdlab");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn heat_with(audits: Vec<AuditSpec>) -> ScenarioConfig {
    let mut cfg = catalog("heat").unwrap();
    cfg.name = "heat-variant".into();
    cfg.audits = audits;
    cfg
}

fn write_scenario(dir: &Path, cfg: &ScenarioConfig) -> String {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn heat_report_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, stdout, _) = rdlab(&["report", "--scenario", "heat", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["summary"]["passed"], 2);
    let manifest = read_json(&out.join("manifest.json"));
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["file"].as_str().unwrap()).collect();
    assert!(files.contains(&"report.json"));
    assert!(files.iter().any(|f| f.starts_with("spectrum-")));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let (code, _, err) = rdlab(&["report", "--scenario", "gradient-free", "--threads", "2", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
    }
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(b.join("report.json")).unwrap());
}

#[test]
fn failed_audit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut census = AuditSpec::new(AuditId::Census);
    census.expected = Some(2);
    let path = write_scenario(dir.path(), &heat_with(vec![census]));
    let (code, stdout, _) = rdlab(&["report", "--scenario", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2, "{stdout}");
}

#[test]
fn inconclusive_audit_exits_with_three_only_when_strict() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = heat_with(vec![AuditSpec::new(AuditId::FloquetOracle)]);
    cfg.nonlinearity = Some("1 - u".into());
    let path = write_scenario(dir.path(), &cfg);
    let out = dir.path().join("o");
    let (code, _, _) = rdlab(&["report", "--scenario", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(read_json(&out.join("report.json"))["audits"][0]["status"], "inconclusive");
    let (code, _, _) = rdlab(&["report", "--strict", "--scenario", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3);
}

#[test]
fn infrastructure_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = rdlab(&["report", "--scenario", "no-such-scenario", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 4);
    assert!(err.contains("heat"), "{err}");
    let (code, _, err) = rdlab(&["report", "--scenario", "heat", "--plot", "distance-history", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 4, "{err}");
    let (code, _, _) = rdlab(&["report", "--scenario", "heat", "--plot", "histogram", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 4);
}

#[test]
fn duplicate_audits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        &heat_with(vec![AuditSpec::new(AuditId::Census), AuditSpec::new(AuditId::Census)]),
    );
    let (code, _, err) = rdlab(&["report", "--scenario", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn resolution_override_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(rdlab(&["census", "--scenario", "heat", "--out", a.to_str().unwrap()]).0, 0);
    assert_eq!(rdlab(&["census", "--scenario", "heat", "--resolution", "64", "--out", b.to_str().unwrap()]).0, 0);
    let (ra, rb) = (read_json(&a.join("report.json")), read_json(&b.join("report.json")));
    assert_eq!(rb["resolution"]["points"], 64);
    assert_ne!(ra["scenario_hash"], rb["scenario_hash"]);
}

#[test]
fn single_operations_write_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = rdlab(&["simulate", "--scenario", "dissipativity", "--periods", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let sim = read_json(&out.join("simulate.json"));
    assert_eq!(sim["periods"], 2);
    assert!(sim["final_sup"].as_f64().unwrap() < sim["initial_sup"].as_f64().unwrap());
    let (code, _, err) = rdlab(&["fixpoint", "--scenario", "gradient-free", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(read_json(&out.join("fixpoint.json"))["solves"].as_array().unwrap().len() == 7);
}

#[test]
fn catalog_lists_every_scenario() {
    let (code, stdout, _) = rdlab(&["catalog"]);
    assert_eq!(code, 0);
    for name in ["heat", "chafee2", "forced-chafee", "gradient-free", "dissipativity", "recursion-suite"] {
        assert!(stdout.lines().any(|l| l == name), "{name}");
    }
}
