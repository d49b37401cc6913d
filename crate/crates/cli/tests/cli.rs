use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn thzlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thzlab")).args(args).output().expect("spawn thzlab")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

/// Four users under the reference link budget with smooth exponential
/// absorption.
fn write_fixture(dir: &Path) -> String {
    let p_tot = 10f64.powf(-0.5) * 1e-3;
    let fixture = serde_json::json!({
        "distances_m": [2.5, 3.9, 5.2, 7.8],
        "epsilon_f_hz": 752e9,
        "b_tot_hz": 12e9,
        "b_max_hz": 5e9,
        "p_tot_w": p_tot,
        "p_max_w": 1.25 * p_tot / 4.0,
        "rho": 1.4296e40,
        "absorption": {
            "type": "exponential",
            "params": { "eta": [25.0, -3.4e-11, 0.02], "f_lo_hz": 752e9, "f_hi_hz": 830e9 }
        }
    });
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(&fixture).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn self_checks_pass() {
    let out = thzlab(&["check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = thzlab(&["run", "--experiment", "fig9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn desk_scale_rejects_paper_sized_batches() {
    let dir = tempfile::tempdir().unwrap();
    let out = thzlab(&["run", "--experiment", "fig4", "--out", dir.path().to_str().unwrap(), "--set", "n_t=300"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn malformed_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = thzlab(&["run", "--experiment", "fig4", "--out", dir.path().to_str().unwrap(), "--set", "n_t"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fits_an_exponential_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("k.csv");
    let mut text = String::from("frequency_hz,k_per_m\n");
    for i in 0..=50 {
        let f = 752e9 + 1e9 * i as f64;
        text.push_str(&format!("{f},{}\n", (25.0 - 3.4e-11 * f).exp() + 0.02));
    }
    fs::write(&csv, text).unwrap();
    let out = thzlab(&["fit-absorption", "--csv", csv.to_str().unwrap(), "--range", "752e9", "802e9"]);
    let v = stdout_json(&out);
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-6);
    let eta: Vec<f64> = v["eta"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((eta[1] / -3.4e-11 - 1.0).abs() < 1e-3, "eta {eta:?}");
}

#[test]
fn missing_table_is_a_usage_error() {
    let out = thzlab(&["fit-absorption", "--csv", "/nonexistent/k.csv", "--range", "752e9", "802e9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn baseline_solvers_respect_the_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path());
    for solver in ["esb", "convex"] {
        let v = stdout_json(&thzlab(&["solve", "--solver", solver, "--scenario", &fixture]));
        let p: f64 = v["p_w"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        let b: f64 = v["b_hz"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!(p <= 10f64.powf(-0.5) * 1e-3 * (1.0 + 1e-9), "{solver}: power {p}");
        assert!((b - 12e9).abs() <= 1e-6 * 12e9, "{solver}: bandwidth {b}");
        assert!(v["r_ag_bps"].as_f64().unwrap() > 0.0);
        assert_eq!(v["converged"], true);
    }
}

#[test]
fn learned_solver_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path());
    let out = thzlab(&["solve", "--solver", "learned", "--scenario", &fixture]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn learned_solver_runs_from_a_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = thzlab(&[
        "run", "--experiment", "fig4", "--seed", "3", "--out", run_dir.to_str().unwrap(),
        "--set", "n_users=4", "--set", "b_tot_hz=12e9", "--set", "n_t=4",
        "--set", "n_iterations=5", "--set", "n_holdout=1",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.lines().any(|l| l.ends_with("checkpoint.json")));
    assert!(run_dir.join("manifest.json").exists());

    let fixture = write_fixture(dir.path());
    let ck = run_dir.join("checkpoint.json");
    let v = stdout_json(&thzlab(&["solve", "--solver", "learned", "--scenario", &fixture, "--checkpoint", ck.to_str().unwrap()]));
    assert_eq!(v["solver"], "learned");
    assert_eq!(v["p_w"].as_array().unwrap().len(), 4);
    assert!(v["b_hz"].as_array().unwrap().iter().all(|b| (0.0..=5e9).contains(&b.as_f64().unwrap())));
}
