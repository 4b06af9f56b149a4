//! End-to-end checks of the `semiscat` binary: the trivial free-potential
//! scatter table, the amplitude-with-oracle pipeline, the validation exit
//! codes, and manifest/determinism guarantees.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semiscat"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("semiscat-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn free_potential_scatter_is_trivial() {
    let dir = tempdir("free");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
          "schema_version": 1,
          "model": { "schema_version": 1, "family": "zero", "n": 2 },
          "scatter": { "energy": 1.0, "omega": [1.0, 0.0],
                       "impacts": [[0.0], [0.7], [-1.3]] }
        }"#,
    );
    let out = dir.join("out");
    let status = bin()
        .args(["scatter", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "exit: {status:?}");

    let table = fs::read_to_string(out.join("scatter_table.csv")).unwrap();
    let mut rows = 0;
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        // theta columns 5..7 must equal omega = (1, 0).
        let t1: f64 = cols[5].parse().unwrap();
        let t2: f64 = cols[6].parse().unwrap();
        assert!((t1 - 1.0).abs() < 1e-9 && t2.abs() < 1e-9, "row: {line}");
        assert_eq!(*cols.last().unwrap(), "ok");
        rows += 1;
    }
    assert_eq!(rows, 3);

    // Manifest lists the table and reports a clean run.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs
        .iter()
        .any(|o| o["name"] == "scatter_table.csv"));
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn amplitude_with_oracle_reports_both_values() {
    let dir = tempdir("amp");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
          "schema_version": 1,
          "model": { "schema_version": 1, "family": "gaussian", "n": 2,
                     "e0": 1.0, "lambda": [1.0, 1.0] },
          "amplitude": { "energy": 1.5, "h": 0.1, "omega": [1.0, 0.0],
                         "theta": [0.955336489125606, 0.295520206661340],
                         "oracle": true }
        }"#,
    );
    let out = dir.join("out");
    let status = bin()
        .args(["amplitude", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "exit: {status:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("amplitude.json")).unwrap()).unwrap();
    let f_sc = report["oracle"]["semiclassical_abs_f"].as_f64().unwrap();
    let f_q = report["oracle"]["partial_wave_abs_f"].as_f64().unwrap();
    let rel = report["oracle"]["relative_error"].as_f64().unwrap();
    assert!(f_sc > 0.0 && f_q > 0.0);
    assert!((rel - (f_sc - f_q).abs() / f_q).abs() < 1e-12);
    assert!(rel < 0.2, "semiclassical/quantum disagree: rel {rel}");
    assert_eq!(report["branches"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempdir("bad");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
          "schema_version": 1,
          "model": { "schema_version": 1, "family": "gaussian", "n": 2,
                     "e0": 1.0, "lambda": [1.0] },
          "flow": { "initial": [ { "x": [0.0, 0.0], "xi": [1.0, 0.0] } ], "t": 1.0 }
        }"#,
    );
    let out = dir.join("out");
    let status = bin()
        .args(["flow", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
    assert!(!out.join("flow_000.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempdir("det");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
          "schema_version": 1,
          "model": { "schema_version": 1, "family": "gaussian", "n": 2,
                     "e0": 1.0, "lambda": [1.0, 1.3] },
          "scatter": { "energy": 1.5, "omega": [0.6, 0.8],
                       "impacts": [[0.4], [0.9], [1.7], [2.6]] }
        }"#,
    );
    let mut tables = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.join(tag);
        let status = bin()
            .args(["scatter", "--jobs", "2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        tables.push(fs::read(out.join("scatter_table.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}
