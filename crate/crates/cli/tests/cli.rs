use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "T = 0.2
dt = 0.05
dt_ode = 0.05
grid.n_r = 32
grid.n_u = 12
grid.n_mu = 6
grid.r_max = 100
diag.fit_lo = 10
diag.fit_hi = 100
audit.samples = 500
";

const STEADY: &str = "initial.delta = 0\nT = 1\ndt = 0.01\ndt_ode = 0.01\n";

fn vpsa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpsa")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn status<'a>(rep: &'a Value, id: &str) -> &'a str {
    rep["verdicts"].as_array().unwrap().iter().find(|v| v["id"] == id).unwrap()["status"].as_str().unwrap()
}

#[test]
fn steady_run_passes_a1() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "steady.cfg", STEADY);
    let out = vpsa(tmp.path(), &["run", "--config", "steady.cfg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");
    let rep = report(&dir);
    assert_eq!(status(&rep, "A1"), "pass");
    assert_eq!(rep["verdicts"].as_array().unwrap().len(), 10);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().next().unwrap().starts_with("A1   PASS"));
    let series = fs::read_to_string(dir.join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 102);
}

#[test]
fn series_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "small.cfg", SMALL);
    for d in ["a", "b"] {
        let out = vpsa(tmp.path(), &["run", "--config", "small.cfg", "--out", d]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(tmp.path().join("a/series.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/series.csv")).unwrap();
    assert_eq!(a, b);
    let mut ra = report(&tmp.path().join("a"));
    let mut rb = report(&tmp.path().join("b"));
    ra["timing"] = Value::Null;
    rb["timing"] = Value::Null;
    assert_eq!(ra, rb);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "small.cfg", SMALL);
    assert!(vpsa(tmp.path(), &["run", "--config", "small.cfg", "--out", "a"]).status.success());
    let echo = report(&tmp.path().join("a"))["config"].as_str().unwrap().to_string();
    write(tmp.path(), "echo.cfg", &echo);
    assert!(vpsa(tmp.path(), &["run", "--config", "echo.cfg", "--out", "b"]).status.success());
    assert_eq!(report(&tmp.path().join("b"))["config"].as_str().unwrap(), echo);
    assert_eq!(fs::read(tmp.path().join("a/series.csv")).unwrap(), fs::read(tmp.path().join("b/series.csv")).unwrap());
}

#[test]
fn validation_errors_exit_one_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.cfg", "T = 1\nq = 10\n");
    let out = vpsa(tmp.path(), &["run", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("7 + sqrt(33)"), "{err}");
    assert!(!tmp.path().join("out").exists());

    write(tmp.path(), "typo.cfg", "grid.nr = 10\n");
    let out = vpsa(tmp.path(), &["run", "--config", "typo.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key 'grid.nr'"));
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vpsa(tmp.path(), &["run", "--config", "nope.cfg"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn blow_up_exits_two_and_removes_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "blow.cfg", &format!("{SMALL}solver.blowup_factor = 1e-3\noutput.snapshot_every = 1\n"));
    let out = vpsa(tmp.path(), &["run", "--config", "blow.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blow-up"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn snapshots_follow_the_cadence() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "snap.cfg", &format!("{SMALL}output.snapshot_every = 2\n"));
    assert!(vpsa(tmp.path(), &["run", "--config", "snap.cfg"]).status.success());
    let dir = tmp.path().join("out");
    for k in [0, 2, 4] {
        assert!(dir.join(format!("snapshot_{k}.csv")).exists());
        assert!(dir.join(format!("field_{k}.csv")).exists());
    }
    assert!(!dir.join("snapshot_1.csv").exists());
    let field = fs::read_to_string(dir.join("field_4.csv")).unwrap();
    assert_eq!(field.lines().next().unwrap(), "r,rho,m,E_mag");
}

#[test]
fn audit_reports_four_conditions() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "default.cfg", "");
    let out = vpsa(tmp.path(), &["audit", "--config", "default.cfg", "--seed", "3"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for c in ["(I) pass", "(II) pass", "(III) pass", "(IV) pass"] {
        assert!(stdout.contains(c), "{stdout}");
    }
    let audit: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/audit.json")).unwrap()).unwrap();
    assert_eq!(audit["seed"], 3);
}

#[test]
fn probe_and_cov_check_on_a_completed_run() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "small.cfg", SMALL);
    let out = vpsa(tmp.path(), &["probe", "--config", "small.cfg", "--x", "200", "--D", "2", "--samples", "64", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let probe: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/probe.json")).unwrap()).unwrap();
    assert_eq!(probe["probe"]["seed"], 7);
    assert!(probe["probe"]["min_ratio"].as_f64().unwrap() >= 0.5);

    let out = vpsa(tmp.path(), &["cov-check", "--config", "small.cfg", "--out", "cov"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cov: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("cov/cov_check.json")).unwrap()).unwrap();
    assert!(cov["check"]["relerr"].as_f64().unwrap() < 1e-3);

    // inside the admissibility radius the probe refuses
    let out = vpsa(tmp.path(), &["probe", "--config", "small.cfg", "--x", "1", "--out", "in"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("in").exists());
}

#[test]
fn oracle_single_point_on_the_ball() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vpsa(tmp.path(), &["oracle", "--x", "2,0,0", "--spacing", "0.05"]);
    assert!(out.status.success());
    let o: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/oracle.json")).unwrap()).unwrap();
    let e = o["check"]["oracle"]["field"][0].as_f64().unwrap();
    assert!((e - 0.25).abs() < 1e-3, "{e}");
    assert!(o["check"]["relerr"].as_f64().unwrap() < 1e-3);
}

#[test]
fn threads_flag_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "steady.cfg", STEADY);
    let out = vpsa(tmp.path(), &["run", "--config", "steady.cfg", "--threads", "2"]);
    assert!(out.status.success());
}
