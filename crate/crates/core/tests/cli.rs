use attention_market::allocation::AllocationSolution;
use attention_market::control::ControlSolution;
use attention_market::equilibrium::EquilibriumReport;
use attention_market::stability::{CriticalBetaReport, StabilityReport};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const BASE: &str = r#"{
    "params": {
        "n_streamers": 2, "total_viewers": 1000,
        "attractiveness": {"uniform": 0.05}, "price": [0, 0],
        "network_effect": 0.001, "viewer_speed": 1, "quality_speed": 1,
        "platform_cut": 0.2, "revenue_rate": 1, "traffic_sensitivity": 0,
        "discount_rate": 0.1, "cost": {"quadratic": {"kappa": 1}}
    },
    "initial": {"viewers": {"symmetric_perturbed": 0.01}},
    "integrator": {"step": 0.05, "horizon": 2.0},
    "control": {"horizon": 1.0, "steps": 10},
    "sweep": {
        "axes": [{"param": "network_effect", "values": [0.0005, 0.004]}],
        "metrics": ["hhi", "max_re_lambda"],
        "integrator": {"step": 0.05, "horizon": 30.0}
    }
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_attention-market"))
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], scenario: &Path) -> Output {
    bin().args(args).arg("--scenario").arg(scenario).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn simulate_writes_trajectory_header() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", BASE);
    let o = run(&["simulate"], &sc);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,n_1,n_2,q_1,q_2,s_1,s_2,hhi");
    assert_eq!(lines.count(), 41);
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", BASE);
    let a = run(&["simulate", "--seed", "7"], &sc);
    let b = run(&["simulate", "--seed", "7"], &sc);
    assert_eq!(a.stdout, b.stdout);
    let a = run(&["equilibrium", "--seed", "11"], &sc);
    let b = run(&["equilibrium", "--seed", "11"], &sc);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn critical_beta_reports_frozen_threshold() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", BASE);
    let out = dir.path().join("cb.json");
    let o = run(&["critical-beta", "--out", out.to_str().unwrap()], &sc);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: CriticalBetaReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // frozen-quality threshold N/M for N = 2, M = 1000
    assert!((r.beta_star - 0.002).abs() <= 1e-9, "{}", r.beta_star);
    assert!(r.quality_frozen);
}

#[test]
fn json_reports_round_trip() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", BASE);

    let o = run(&["equilibrium"], &sc);
    let r: EquilibriumReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r.converged);
    let again: EquilibriumReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(again.state.viewers, r.state.viewers);

    let o = run(&["stability"], &sc);
    let r: StabilityReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.eigenvalues.len(), 4);
    assert!(r.stable);

    let o = run(&["welfare"], &sc);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["breakdown"]["total"].as_f64().unwrap().is_finite());
    assert!(v["head_effect_comparison"]["beta_star"].is_number());
}

#[test]
fn allocate_prints_table_to_stderr() {
    let dir = TempDir::new().unwrap();
    let text = BASE.replace("\"traffic_sensitivity\": 0", "\"traffic_sensitivity\": 1");
    let sc = write(&dir, "s.json", &text);
    let o = run(&["allocate"], &sc);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stderr(&o);
    assert!(table.contains("theta"), "{table}");
    let sol: AllocationSolution = serde_json::from_slice(&o.stdout).unwrap();
    assert!((sol.theta.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

#[test]
fn control_writes_csv_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let text = BASE.replace("\"traffic_sensitivity\": 0", "\"traffic_sensitivity\": 1");
    let sc = write(&dir, "s.json", &text);
    let out = dir.path().join("ctl.csv");
    let o = run(&["control", "--out", out.to_str().unwrap()], &sc);
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,theta_1,theta_2,lambda_1,lambda_2,n_1,n_2,w");
    assert_eq!(csv.lines().count(), 12);
    let side = std::fs::read_to_string(dir.path().join("ctl.csv.json")).unwrap();
    let sol: ControlSolution = serde_json::from_str(&side).unwrap();
    assert_eq!(sol.theta_path.len(), 11);
    assert_eq!(o.status.code(), Some(if sol.converged { 0 } else { 1 }));
}

#[test]
fn sweep_writes_long_table() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", BASE);
    let o = run(&["sweep"], &sc);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "network_effect,metric,value");
    assert_eq!(lines.count(), 4);
}

#[test]
fn negative_beta_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", &BASE.replace("\"network_effect\": 0.001", "\"network_effect\": -0.5"));
    let o = run(&["simulate"], &sc);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("network_effect"), "{}", stderr(&o));
}

#[test]
fn bad_allocation_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", &BASE.replace("\"initial\": {", "\"initial\": {\"allocation\": [0.7, 0.7], "));
    let o = run(&["simulate"], &sc);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("allocation"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "s.json", &BASE.replace("\"viewer_speed\"", "\"viewer_sped\": 1, \"viewer_speed\""));
    let o = run(&["simulate"], &sc);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("viewer_sped"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&["simulate"], &dir.path().join("nope.json"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_without_block_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let v: serde_json::Value = serde_json::from_str(BASE).unwrap();
    let mut obj = v.as_object().unwrap().clone();
    obj.remove("sweep");
    let sc = write(&dir, "s.json", &serde_json::to_string(&obj).unwrap());
    let o = run(&["sweep"], &sc);
    assert_eq!(o.status.code(), Some(2));
}
