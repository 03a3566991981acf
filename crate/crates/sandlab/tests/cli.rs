//! End-to-end checks of the sandlab binary: flag handling, config-file
//! precedence, output determinism and exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sandlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

#[test]
fn enumerate_small_lattice_exact_count() {
    let out = run(&["enumerate", "--dim", "2", "--L", "1", "--n", "1", "--m", "1"]);
    let v = stdout_json(&out);
    assert_eq!(v["result"]["allowed_count"], 614_656);
    assert_eq!(v["result"]["total_states"], 1_953_125);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["params"]["sites"], 9);
}

#[test]
fn json_reports_identical_modulo_timestamp() {
    let args = ["simulate", "--dim", "2", "--L", "2", "--n", "1", "--m", "2",
                "--samples", "2000", "--seed", "99"];
    let mut a = stdout_json(&run(&args));
    let mut b = stdout_json(&run(&args));
    a["timestamp_unix"] = 0.into();
    b["timestamp_unix"] = 0.into();
    assert_eq!(a.to_string(), b.to_string());
    // a different seed changes the payload
    let mut c = stdout_json(&run(&["simulate", "--dim", "2", "--L", "2", "--n", "1",
        "--m", "2", "--samples", "2000", "--seed", "100"]));
    c["timestamp_unix"] = 0.into();
    assert_ne!(a.to_string(), c.to_string());
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = std::env::temp_dir().join(format!("sandlab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.conf");
    std::fs::write(
        &cfg,
        "# lattice\ndim = 2\nL = 1\nn = 1\nm = 1\nseed = 5\nsamples = 500\n",
    )
    .unwrap();
    let v = stdout_json(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["params"]["seed"], 5);
    assert_eq!(v["params"]["samples"], 500);
    // CLI wins over the file
    let v = stdout_json(&run(&[
        "simulate", "--config", cfg.to_str().unwrap(), "--samples", "750",
    ]));
    assert_eq!(v["params"]["samples"], 750);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn green_csv_symmetric_under_sign_flips() {
    let out = run(&["green", "--dim", "2", "--a", "0.5", "--n", "1", "--radius", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,value,est_abs_error,method");
    let mut by_coords = std::collections::HashMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (x1, x2): (i64, i64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        by_coords.insert((x1, x2), f[2].to_string());
    }
    for (&(x1, x2), v) in &by_coords {
        assert_eq!(v, &by_coords[&(-x1, -x2)], "sign flip at ({x1},{x2})");
        assert_eq!(v, &by_coords[&(x2, x1)], "transpose at ({x1},{x2})");
    }
    // 17 significant digits, dot separator
    let sample = &by_coords[&(0, 0)];
    assert!(sample.contains('.') && sample.contains('e'));
    assert_eq!(sample.split(['.', 'e']).nth(1).unwrap().len(), 16);
}

#[test]
fn heights_emits_summary_and_csv() {
    let dir = std::env::temp_dir().join(format!("sandlab-h-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv: PathBuf = dir.join("c00.csv");
    let out = run(&[
        "heights", "--dim", "2", "--a", "0.25", "--n", "1", "--rmax", "4",
        "--csv", csv.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    let summary = &v["result"]["summary"];
    let p0 = summary["p0_det"].as_f64().unwrap();
    assert!((p0 - summary["p0_closed"].as_f64().unwrap()).abs() < 1e-8);
    assert!(p0 > 0.0 && p0 < 1.0);
    assert!(summary["c2"].as_f64().unwrap() < 0.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("r,P00,C00,reliable_flag"));
    assert_eq!(text.lines().count(), 1 + 3); // header + k = 2..4
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn exit_codes() {
    // unknown flag → input error
    let out = run(&["enumerate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    // invalid parameters → input error
    let out = run(&["enumerate", "--dim", "1", "--L", "1", "--n", "1", "--m", "1"]);
    assert_eq!(out.status.code(), Some(1));
    // size guard → input error
    let out = run(&["enumerate", "--dim", "2", "--L", "3", "--n", "1", "--m", "1"]);
    assert_eq!(out.status.code(), Some(1));
    // help is success
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn scaling_reports_exponent() {
    let out = run(&["scaling", "--dim", "2", "--a-grid", "1e-1:1e-5:log", "--points", "9",
                    "--kappa", "1.0"]);
    let v = stdout_json(&out);
    let nu = v["result"]["nu_a"].as_f64().unwrap();
    assert!((nu - 0.5).abs() < 0.01, "nu = {nu}");
    let pre = v["result"]["prefactor"].as_f64().unwrap();
    assert!((pre - 0.5).abs() / 0.5 < 0.02, "prefactor = {pre}");
}

#[test]
fn output_file_written() {
    let dir = std::env::temp_dir().join(format!("sandlab-o-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("exact.json");
    let out = run(&["exact", "--dim", "2", "--L", "1", "--n", "1", "--m", "1",
                    "--output", path.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["result"]["recurrent_count"], 614_656);
    std::fs::remove_dir_all(&dir).ok();
}
