use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn phcirc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phcirc")).args(args).output().expect("binary runs")
}

fn netlist(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../netlists").join(name).to_string_lossy().into_owned()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("diagnostic on stderr");
    serde_json::from_str(line).expect("stderr diagnostic is JSON")
}

#[test]
fn check_two_node_rc() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rc.cir");
    std::fs::write(&path, "* two nodes\nV1 1 0 DC 5\nR1 1 0 R=10\n.ground 0\n.end\n").unwrap();
    let out = phcirc(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["graph"]["n"], 2);
    assert_eq!(report["graph"]["m"], 2);
    assert_eq!(report["graph"]["k"], 1);
    assert_eq!(report["errors"].as_array().unwrap().len(), 0);
}

#[test]
fn check_reports_auto_ground() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("float.cir");
    std::fs::write(&path, "V1 a b DC 1\nR1 a b R=1\n").unwrap();
    let out = phcirc(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn check_rejects_self_loop() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cir");
    std::fs::write(&path, "R1 1 1 R=5\n").unwrap();
    let out = phcirc(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let diag = stderr_json(&out);
    assert_eq!(diag["error"], "netlist");
    assert_eq!(diag["line"], 1);
}

#[test]
fn missing_file_is_a_json_failure() {
    let out = phcirc(&["check", "/nonexistent/x.cir"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "io");
}

#[test]
fn usage_errors_exit_two() {
    for args in [&["frobnicate"][..], &["simulate"], &["simulate", "x.cir", "--method", "rk4"]] {
        let out = phcirc(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_json(&out)["error"], "usage");
    }
}

#[test]
fn simulate_rc_writes_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = phcirc(&["simulate", &netlist("rc.cir"), "--dt", "1e-6", "--tstop", "5e-3", "-o", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    assert_eq!(lines.clone().count(), 5001);
    let uc = header.iter().position(|h| *h == "u(C1)").unwrap();
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((last[0] - 5e-3).abs() < 1e-12);
    assert!((last[uc] - 5.0 * (1.0 - (-5.0f64).exp())).abs() < 0.05);
}

#[test]
fn simulate_formulations_agree() {
    let mut finals = Vec::new();
    for f in ["mna-cf", "mna", "mla"] {
        let out = phcirc(&["simulate", &netlist("rlc.cir"), "--tstop", "1e-3", "--formulation", f, "--format", "json"]);
        assert_eq!(out.status.code(), Some(0), "{f}: {}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        let obs = v["observations"].as_array().unwrap();
        assert_eq!(obs.len(), 1001);
        finals.push(obs.last().unwrap()["edge_currents"][0].as_f64().unwrap());
    }
    assert!((finals[0] - finals[1]).abs() < 1e-6 && (finals[0] - finals[2]).abs() < 1e-6, "{finals:?}");
}

#[test]
fn verify_rectifier() {
    let out = phcirc(&["verify", &netlist("bridge_rectifier/acdc.cir"), "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let suites = v["suites"].as_array().unwrap();
    assert_eq!(suites.len(), 5);
    for s in suites {
        assert_eq!(s["passed"], s["total"]);
    }
}

#[test]
fn outputs_are_deterministic() {
    for args in [
        vec!["verify".to_string(), netlist("rlc.cir"), "--seed".into(), "3".into()],
        vec!["assemble".to_string(), netlist("bridge_rectifier/acdc.cir")],
        vec!["mla".to_string(), netlist("npn_bias.cir")],
        vec!["simulate".to_string(), netlist("rl_loop.cir"), "--tstop".into(), "2e-4".into()],
    ] {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let a = phcirc(&args);
        let b = phcirc(&args);
        assert_eq!(a.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn assemble_emits_kernel_and_blocks() {
    let out = phcirc(&["assemble", &netlist("rc.cir"), "--emit", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let n = v["n"].as_u64().unwrap() as usize;
    assert_eq!(v["K"].as_array().unwrap().len(), n);
    assert_eq!(v["L"].as_array().unwrap()[0].as_array().unwrap().len(), n);
    assert_eq!(v["blocks"]["A"].as_array().unwrap().len(), 2);
}

#[test]
fn mna_reports_square_system() {
    for form in ["cf", "potential"] {
        let out = phcirc(&["mna", &netlist("rlc.cir"), "--form", form]);
        assert_eq!(out.status.code(), Some(0));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["unknowns"], v["equations"]);
        assert_eq!(v["differential"].as_array().unwrap().len(), v["unknowns"].as_u64().unwrap() as usize);
    }
}
