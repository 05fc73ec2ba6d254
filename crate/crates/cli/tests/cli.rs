use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tpem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpem")).args(args).output().expect("run tpem")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("tpem-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const DECOUPLED: &str = r#"
[system]
kind = "mesh"
cells = [2, 2, 2]

[boundary]
kind = "trivial"

[certificate]
fixed_nu = 0.5

[solver]
dt = 0.02
n_steps = 100
nu = 0.5
"#;

#[test]
fn certify_decoupled_accepts_with_c_min_nu_one() {
    let d = scratch("cert-ok");
    let cfg = write_config(&d, DECOUPLED);
    let o = tpem(&["certify", "--config", &cfg, "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cert = json(&d.join("certificate.json"));
    assert_eq!(cert["accepted"], true);
    assert!((cert["c"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn certify_eddy_current_without_conductivity_exits_2() {
    let d = scratch("cert-eddy");
    let cfg = write_config(
        &d,
        r#"
[system]
kind = "abstract"
dims = { displacement = 1, sym = 1, vector = 1, scalar = 1 }
bd = [1, 1, 1]

[material]
preset = "scalar-sample"
eddy_current = true

[boundary]
kind = "trivial"
"#,
    );
    let o = tpem(&["certify", "--config", &cfg, "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let cert = json(&d.join("certificate.json"));
    assert_eq!(cert["accepted"], false);
    assert_eq!(cert["worst_condition"], "nu m0_44 + sigma >> 0");
    assert!(String::from_utf8_lossy(&o.stderr).contains("nu m0_44 + sigma"));
}

#[test]
fn malformed_configs_exit_1() {
    let d = scratch("bad");
    for body in [
        "this is not toml [",
        "[system]\nkind = \"mesh\"\ncells = [2, 2, 2]\nbogus = 1\n",
        "[system]\nkind = \"mesh\"\ncells = [1, 2, 2]\n",
        "[system]\nkind = \"mesh\"\ncells = [2, 2, 2]\n[sources]\nkind = \"gaussian-pulse\"\nslot = \"tau_T\"\nonset = 0.0\nwidth = 0.1\n",
        "[system]\nkind = \"mesh\"\ncells = [2, 2, 2]\n[sources]\nkind = \"gaussian-pulse\"\nslot = \"E\"\nonset = -1.0\nwidth = 0.1\n",
        "[system]\nkind = \"mesh\"\ncells = [2, 2, 2]\n[solver]\nnu = \"sometimes\"\n",
    ] {
        let cfg = write_config(&d, body);
        let o = tpem(&["certify", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(code(&o), 1, "{body}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&tpem(&["certify", "--config", "/nonexistent/run.toml"])), 1);
    assert_eq!(code(&tpem(&["simulate"])), 1);
    assert_eq!(code(&tpem(&["frobnicate"])), 1);
    assert_eq!(code(&tpem(&["--help"])), 0);
}

#[test]
fn simulate_zero_sources_writes_zero_series() {
    let d = scratch("sim-zero");
    let cfg = write_config(&d, DECOUPLED);
    let o = tpem(&["simulate", "--config", &cfg, "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,t,slot,norm"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 101 * 10);
    assert!(rows.iter().all(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap() == 0.0));
    let side = json(&d.join("series.json"));
    let bytes = fs::read(d.join("series.bin")).unwrap();
    let shape: Vec<u64> = side["shape"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(bytes.len() as u64, shape[0] * shape[1] * 8);
    assert!(bytes.iter().all(|&b| b == 0));
}

#[test]
fn simulate_pulse_is_causal_and_solvers_agree() {
    let d = scratch("sim-pulse");
    let body = format!(
        "{DECOUPLED}compare = true\n\n[sources]\nkind = \"gaussian-pulse\"\nslot = \"E\"\nonset = 1.0\nwidth = 0.1\n"
    );
    let cfg = write_config(&d, &body);
    let o = tpem(&["simulate", "--config", &cfg, "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&d.join("summary.json"));
    assert!(s["causality"].as_f64().unwrap() <= 1e-13);
    assert!(s["norm_bound_slack"].as_f64().unwrap() >= 0.0);
    let time_l2 = s["compare_relative_l2"].as_f64().unwrap();
    assert!(time_l2 < 0.2, "{time_l2}");

    let o = tpem(&["simulate", "--config", &cfg, "--out", d.to_str().unwrap(), "--solver", "freq"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&d.join("summary.json"));
    assert_eq!(s["solver"], "freq");
    assert!(s["wrap"]["warning"] == false);
    let freq_l2 = s["compare_relative_l2"].as_f64().unwrap();
    assert!((freq_l2 - time_l2).abs() <= 0.5 * time_l2, "{freq_l2} vs {time_l2}");
}

#[test]
fn simulate_requires_certificate_unless_overridden() {
    let d = scratch("sim-gate");
    let cfg = write_config(
        &d,
        r#"
[system]
kind = "abstract"
dims = { displacement = 1, sym = 1, vector = 1, scalar = 1 }
bd = [1, 1, 1]

[material]
preset = "scalar-sample"
eddy_current = true

[boundary]
kind = "trivial"

[solver]
dt = 0.05
n_steps = 40
nu = 1.0

[sources]
kind = "gaussian-pulse"
slot = "theta"
onset = 0.2
width = 0.1
"#,
    );
    let out = d.to_str().unwrap();
    let o = tpem(&["simulate", "--config", &cfg, "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(!d.join("series.csv").exists());
    let o = tpem(&["simulate", "--config", &cfg, "--out", out, "--override-certificate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&d.join("summary.json"));
    assert_eq!(s["certified"], false);
    assert_eq!(s["override_certificate"], true);
}

#[test]
fn kcheck_exit_codes() {
    let o = tpem(&["kcheck", "--trials", "20"]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["max_residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(r["seed"], 42);
    let o = tpem(&["kcheck", "--trials", "5", "--nu", "0.1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("1 - |alpha_b|/nu"));
    assert_eq!(code(&tpem(&["kcheck", "--dims", "3,4"])), 1);
    assert_eq!(code(&tpem(&["kcheck", "--trials", "0"])), 1);
}

#[test]
fn kcheck_writes_report_with_out() {
    let d = scratch("kcheck");
    let o = tpem(&["kcheck", "--trials", "3", "--seed", "7", "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&d.join("kcheck.json"))["seed"], 7);
}

#[test]
fn verify_exit_codes() {
    let o = tpem(&["verify", "mesh"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = tpem(&["verify", "impedance"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).to_lowercase().contains("block diagonal"));
    assert_eq!(code(&tpem(&["verify", "nonsense"])), 1);
}

#[test]
fn json_configs_are_accepted() {
    let d = scratch("json");
    let p = d.join("run.json");
    fs::write(
        &p,
        r#"{"system": {"kind": "mesh", "cells": [2, 2, 2]}, "boundary": {"kind": "trivial"},
            "certificate": {"fixed_nu": 2.0}}"#,
    )
    .unwrap();
    let o = tpem(&["certify", "--config", p.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!((json(&d.join("certificate.json"))["c"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}
