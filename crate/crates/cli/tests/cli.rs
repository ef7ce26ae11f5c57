use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const HEAT: &str = r#"
[system]
n = 1
A = [0.0]
B = [1.0]
omega = [0.3, 0.7]
T = 0.5
"#;

const CASCADE: &str = r#"
[system]
n = 2
A = [1.0, 0.0, 0.0, 2.0]
B = [1.0, 1.0]
omega = [0.3, 0.8]
T = 0.3
epsilon = 0.1
coefficient = { kind = "sin", params = [2.0, 1.0] }

[discretization]
N = 199
"#;

fn run(dir: &TempDir, config: &str, args: &[&str]) -> Output {
    let path = dir.path().join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_homctl"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap()
}

fn summary(dir: &TempDir) -> Value {
    let text = std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn spectrum_of_unit_coefficient() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, HEAT, &["spectrum"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&dir.path().join("out/spectrum.csv"));
    assert_eq!(header, ["index", "k", "i", "lambda", "sigma", "mu"]);
    assert_eq!(rows.len(), 10);
    let lambda: f64 = rows[0][3].parse().unwrap();
    assert!((lambda - std::f64::consts::PI.powi(2)).abs() < 1e-3, "{lambda}");
    assert!(rows[0][3].contains('e'));
    let s = summary(&dir);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["config"]["system"]["omega"][0], 0.3);
}

#[test]
fn rank_deficient_pair_exits_with_hypothesis_code() {
    let dir = TempDir::new().unwrap();
    let config = CASCADE.replace("B = [1.0, 1.0]", "B = [1.0, 0.0]");
    let out = run(&dir, &config, &["kalman"]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(&dir);
    assert_eq!(s["status"], "hypothesis_violation");
    assert!(s["reason"].as_str().unwrap().contains("kalman rank deficient"));
    assert_eq!(s["results"]["rank"], 1);
    assert_eq!(s["config"]["system"]["n"], 2);
}

#[test]
fn kalman_reports_cascade_form() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, CASCADE, &["kalman"]);
    assert!(out.status.success());
    let s = summary(&dir);
    assert_eq!(s["results"]["controllable"], true);
    assert!(s["results"]["canonical"]["similarity_residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = TempDir::new().unwrap();
    let config = CASCADE
        .replace("[0.3, 0.8]", "[0.8, 0.3]")
        .replace("A = [1.0, 0.0, 0.0, 2.0]", "A = [1.0, 0.0, 2.0]");
    let out = run(&dir, &config, &["control"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("omega.left < omega.right"), "{err}");
    assert!(err.contains("system.A"), "{err}");
    assert!(!dir.path().join("out/summary.json").exists());

    let out = run(&dir, "[system]\nn = = 1\n", &["kalman"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn hum_control_and_trajectory() {
    let dir = TempDir::new().unwrap();
    let config = format!("{CASCADE}\n[initial]\ncoordinates = \"original\"\n");
    let out = run(&dir, &config, &["control", "--dump-traj"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&dir);
    let r = &s["results"];
    assert!(r["relative_terminal_norm"].as_f64().unwrap() < 1e-2);
    assert!(r["terminal_norm"].as_f64().unwrap() <= r["terminal_bound"].as_f64().unwrap() * (1.0 + 1e-8));
    let replayed = r["replayed_terminal_norm"].as_f64().unwrap();
    assert!((replayed - r["terminal_norm"].as_f64().unwrap()).abs() <= 1e-10);
    assert!(s["runtime_seconds"].as_f64().unwrap() >= 0.0);

    let (header, rows) = csv(&dir.path().join("out/control.csv"));
    assert_eq!(header, ["t", "x", "f1"]);
    for row in &rows {
        let x: f64 = row[1].parse().unwrap();
        assert!(x > 0.3 && x < 0.8);
    }
    let (header, _) = csv(&dir.path().join("out/trajectory.csv"));
    assert_eq!(header, ["t", "x", "u1", "u2", "y1", "y2"]);
}

#[test]
fn three_stage_override() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, CASCADE, &["control", "--method", "three-stage"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&dir);
    assert_eq!(s["config"]["control"]["method"], "three-stage");
    let stages = &s["results"]["stages"];
    let c1 = stages["stage1_cost"].as_f64().unwrap();
    let c3 = stages["stage3_cost"].as_f64().unwrap();
    let total = s["results"]["cost"].as_f64().unwrap();
    assert!((total - (c1 * c1 + c3 * c3).sqrt()).abs() <= 1e-12 * total);
    assert!(s["results"]["relative_terminal_norm"].as_f64().unwrap() < 1e-2);
}

#[test]
fn sweep_writes_one_row_per_epsilon() {
    let dir = TempDir::new().unwrap();
    let config = HEAT.replace("T = 0.5", "T = 0.5\ncoefficient = { kind = \"sin\", params = [2.0, 1.0] }");
    let out = run(&dir, &config, &["sweep", "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&dir.path().join("out/sweep.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(header[0], "epsilon");
    assert!(!header.iter().any(|h| h.contains("runtime")));
    let s = summary(&dir);
    assert!(s["results"]["cost_slope"].is_number());
    assert_eq!(s["results"]["pass"]["uniform_cost"], true);
    assert_eq!(s["results"]["pass"]["homogenization"], true);
}

#[test]
fn transform_check_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(&dir, CASCADE, &["transform-check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&dir);
    assert_eq!(s["results"]["pass"]["round_trip"], true);
    assert_eq!(s["results"]["pass"]["spectrum"], true);
    let (header, rows) = csv(&dir.path().join("out/transform.csv"));
    assert_eq!(header, ["x", "z", "r", "y", "g", "b"]);
    let last: f64 = rows.last().unwrap()[1].parse().unwrap();
    assert_eq!(last, 1.0);
}
