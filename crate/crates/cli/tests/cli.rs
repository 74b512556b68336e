use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect()
}

fn hjh(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjh"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env("HJH_LOG", "error")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_TABLE: &str = "solver.table.p2=[-4,-3,-2,-1,0,1,2,3,4]";

#[test]
fn validate_reports_constants_for_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = hjh("validate", &config("baseline.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = json(&dir.path().join("assumptions.json"));
    let d0 = a["delta0"].as_f64().unwrap();
    assert!((d0 - 0.998_795_456_205_172_3).abs() < 1e-12, "{a}");
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["command"], "validate");
}

#[test]
fn single_control_side_is_an_invalid_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = hjh("validate", &config("single_control.json"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["exit_code"], 2);
}

#[test]
fn malformed_json_exits_one_with_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"instance\": {\n    \"left\": ,\n  }\n}\n").unwrap();
    let out = hjh("validate", &bad, &dir.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("baseline.json")).unwrap();
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["solver"]["colour"] = Value::from("blue");
    let path = dir.path().join("typo.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = hjh("validate", &path, &dir.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn non_positive_tolerance_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = hjh(
        "validate",
        &config("baseline.json"),
        dir.path(),
        &["--tol-override", "solver.cell.eps_fix=0"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = hjh("validate", &dir.path().join("absent.json"), &dir.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn solve_eps_writes_field_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = ["--tol-override", "run.eps=0.4", "--jobs", "1"];
    assert_eq!(hjh("solve-eps", &config("baseline.json"), &a, &args).status.code(), Some(0));
    assert_eq!(hjh("solve-eps", &config("baseline.json"), &b, &args).status.code(), Some(0));
    let csv = fs::read_to_string(a.join("value_eps.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("z1,z2,v"), "{}", csv.lines().next().unwrap());
    for f in ["value_eps.csv", "field_eps.json", "resolved_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = json(&a.join("field_eps.json"));
    let sup = summary["sup_norm"].as_f64().unwrap();
    assert!(sup > 0.0 && sup <= 2.0, "{summary}");

    // the resolved configuration reproduces the run without overrides
    let resolved = a.join("resolved_config.json");
    assert_eq!(hjh("solve-eps", &resolved, &c, &["--jobs", "1"]).status.code(), Some(0));
    assert_eq!(fs::read(a.join("value_eps.csv")).unwrap(), fs::read(c.join("value_eps.csv")).unwrap());

    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["overrides"][0], "run.eps=0.4");
    let hash = manifest["outputs"]["value_eps.csv"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn effective_table_on_constant_cost_is_eikonal() {
    let dir = tempfile::tempdir().unwrap();
    let out = hjh("effective", &config("constant_cost.json"), dir.path(), &["--tol-override", SMALL_TABLE]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("effective_table.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (ip, ie) = (
        header.iter().position(|h| *h == "p2").unwrap(),
        header.iter().position(|h| *h == "E").unwrap(),
    );
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let (p2, e): (f64, f64) = (cols[ip].parse().unwrap(), cols[ie].parse().unwrap());
        assert!((e - (p2.abs() - 1.5)).abs() < 0.01, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 9);
}

#[test]
fn solve_limit_on_constant_cost_is_c_over_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = hjh(
        "solve-limit",
        &config("constant_cost.json"),
        dir.path(),
        &["--tol-override", SMALL_TABLE, "--tol-override", "solver.truncation=4"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("value_limit.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v - 1.5).abs() < 1e-7, "{line}");
    }
}
