use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn polydich(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polydich"))
        .args(args)
        .env_remove("POLYDICH_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn system(dir: &TempDir, name: &str, kind: &str, params: Value, d: usize, horizon: usize) -> PathBuf {
    write(
        dir,
        name,
        &json!({"dimension": d, "horizon": horizon, "generator": {"kind": kind, "params": params}}),
    )
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn diag(dir: &TempDir, horizon: usize) -> PathBuf {
    system(dir, "diag.json", "diagonal-poly", json!({"lambda": 1.0}), 2, horizon)
}

#[test]
fn certify_diagonal_model_succeeds() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 128);
    let out = dir.path().join("cert.json");
    let r = polydich(&["certify", "--system", s(&sys), "--norms", "base", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let cert = read_json(&out);
    assert_eq!(cert["flags"]["dichotomy"], true);
    assert_eq!(cert["flags"]["strong"], true);
    assert_eq!(cert["stable_dim"], 1);
}

#[test]
fn certify_counterexample_is_refused_with_bounded_false() {
    let dir = TempDir::new().unwrap();
    let sys = system(&dir, "power2.json", "power2-counterexample", json!({}), 1, 1024);
    let out = dir.path().join("refusal.json");
    let r = polydich(&["certify", "--system", s(&sys), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("bounded=false"));
    let j = read_json(&out);
    assert_eq!(j["certified"], false);
    assert_eq!(j["bounded"], false);
    assert_eq!(j["witness"], 512);
}

#[test]
fn malformed_input_is_an_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"dimension\": 2,").unwrap();
    assert_eq!(code(&polydich(&["certify", "--system", s(&bad)])), 1);
    let unknown = write(&dir, "unknown.json", &json!({"dimension": 2, "horizon": 8, "bogus": 1}));
    assert_eq!(code(&polydich(&["certify", "--system", s(&unknown)])), 1);
    // usage errors must not collide with the analysis-negative code
    assert_eq!(code(&polydich(&["certify"])), 1);
    assert_eq!(code(&polydich(&["solve", "--system", s(&bad)])), 1);
}

#[test]
fn green_solve_round_trip() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 64);
    let cert = dir.path().join("cert.json");
    assert_eq!(code(&polydich(&["certify", "--system", s(&sys), "--out", s(&cert)])), 0);
    let mut entries: Vec<Vec<f64>> = (1..=64).map(|m| vec![(m as f64).sin(), (3.0 * m as f64).cos()]).collect();
    entries[0] = vec![0.0, 0.0];
    let rhs = write(&dir, "y.json", &json!({"entries": entries, "tag": "Y0"}));
    let xg = dir.path().join("xg.json");
    let xt = dir.path().join("xt.json");
    let r = polydich(&["solve", "--green", "--system", s(&sys), "--cert", s(&cert), "--rhs", s(&rhs), "--out", s(&xg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let r = polydich(&["solve", "--truncated", "--system", s(&sys), "--cert", s(&cert), "--rhs", s(&rhs), "--out", s(&xt)]);
    assert_eq!(code(&r), 0);
    let (g, t) = (read_json(&xg), read_json(&xt));
    assert!(g["residual"]["defect"].as_f64().unwrap() <= 1e-8);
    let flat = |v: &Value| -> Vec<f64> {
        v["x"]["entries"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|e| e.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    let gap = flat(&g).iter().zip(flat(&t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap <= 1e-10, "green and truncated solutions differ by {gap}");
}

#[test]
fn rhs_outside_y0_is_rejected() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 32);
    let cert = dir.path().join("cert.json");
    assert_eq!(code(&polydich(&["certify", "--system", s(&sys), "--out", s(&cert)])), 0);
    let entries = vec![vec![1.0, 0.0]; 32];
    let rhs = write(&dir, "y.json", &json!({"entries": entries, "tag": "Y0"}));
    let r = polydich(&["solve", "--green", "--system", s(&sys), "--cert", s(&cert), "--rhs", s(&rhs)]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("not in Y_0"));
}

#[test]
fn report_on_expansion_model_is_invertible() {
    let dir = TempDir::new().unwrap();
    let sys = system(&dir, "exp.json", "diagonal-poly", json!({"exponents": [1.0, 2.0]}), 2, 64);
    let out = dir.path().join("report.json");
    let r = polydich(&["solve", "--report", "--Z", "full", "--system", s(&sys), "--out", s(&out)]);
    assert_eq!(code(&r), 0);
    assert_eq!(read_json(&out)["invertible"], true);
}

#[test]
fn zero_budget_leaves_certificate_unchanged() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 64);
    let out = dir.path().join("p.json");
    let r = polydich(&["perturb", "--system", s(&sys), "--c", "0", "--seeds", "2", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let j = read_json(&out);
    assert_eq!(j["before"], j["after"]);
}

#[test]
fn small_strong_perturbation_keeps_strong_flag() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 64);
    let out = dir.path().join("p.json");
    let r = polydich(&[
        "perturb", "--system", s(&sys), "--c", "0.05", "--regime", "strong", "--seeds", "4", "--out", s(&out),
    ]);
    assert_eq!(code(&r), 0);
    let j = read_json(&out);
    assert_eq!(j["smallness_ok"], true);
    assert_eq!(j["after"]["flags"]["strong"], true);
}

#[test]
fn large_budget_violates_smallness() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 64);
    let out = dir.path().join("p.json");
    let r = polydich(&["perturb", "--system", s(&sys), "--c", "10", "--seeds", "2", "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    assert_eq!(read_json(&out)["smallness_ok"], false);
}

#[test]
fn lyapunov_csv_format_and_slopes() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 128);
    let out = dir.path().join("l.csv");
    assert_eq!(code(&polydich(&["lyapunov", "--system", s(&sys), "--out", s(&out)])), 0);
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("vector_index,slope,r_squared,window_lo,window_hi"));
    let slopes: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(slopes.len(), 2);
    assert!((slopes[0] + 1.0).abs() < 1e-9 && (slopes[1] - 1.0).abs() < 1e-9);

    let id = system(&dir, "id.json", "identity", json!({}), 3, 64);
    let r = polydich(&["lyapunov", "--system", s(&id)]);
    assert_eq!(code(&r), 0);
    let stdout = String::from_utf8(r.stdout).unwrap();
    for l in stdout.lines().skip(1) {
        assert_eq!(l.split(',').nth(1).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let sys = system(&dir, "tri.json", "triangular-poly", json!({"exponents": [-1.0, 0.8], "seed": 5}), 2, 64);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let r = polydich(&["--threads", threads, "certify", "--system", s(&sys), "--out", s(&out)]);
        assert_eq!(code(&r), 0);
        std::fs::read(&out).unwrap()
    };
    assert_eq!(run("a.json", "1"), run("b.json", "4"));
    let perturb = |name: &str| {
        let out = dir.path().join(name);
        let sys = diag(&dir, 32);
        let r = polydich(&["perturb", "--system", s(&sys), "--c", "0.02", "--seeds", "3", "--out", s(&out)]);
        assert_eq!(code(&r), 0);
        std::fs::read(&out).unwrap()
    };
    assert_eq!(perturb("p1.json"), perturb("p2.json"));
}

#[test]
fn threads_env_var_is_honoured() {
    let dir = TempDir::new().unwrap();
    let sys = diag(&dir, 32);
    let r = Command::new(env!("CARGO_BIN_EXE_polydich"))
        .args(["certify", "--system", s(&sys)])
        .env("POLYDICH_THREADS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
    let r = Command::new(env!("CARGO_BIN_EXE_polydich"))
        .args(["certify", "--system", s(&sys)])
        .env("POLYDICH_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
}
