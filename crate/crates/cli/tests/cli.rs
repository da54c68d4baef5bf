use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn mojet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mojet"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn report(dir: &Path) -> Value {
    let text = fs::read_to_string(dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn linreg_writes_report_and_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = mojet()
        .args(["linreg", "--seed", "3", "--plot-data", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["report.json", "ranks.csv", "jetsim.csv", "plot_data.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let r = report(&out);
    assert_eq!(r["provenance"]["seed"], 3);
    assert!(r["metrics"]["jet_vs_beta_hat_max_abs"].as_f64().unwrap() < 1e-8);
    let ranks = fs::read_to_string(out.join("ranks.csv")).unwrap();
    assert!(ranks.starts_with("base_id,tap,rank,s1,s_k\n"));
    assert_eq!(ranks.lines().count(), 1 + 20);
}

#[test]
fn repeated_runs_match_modulo_timing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"n_train": 200, "n_test": 60, "S": 10}"#);
    let mut reports = Vec::new();
    for (i, parallel) in [false, true].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let mut cmd = mojet();
        cmd.args(["pipeline_classification", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out);
        if parallel {
            cmd.arg("--parallel");
        }
        assert!(cmd.output().unwrap().status.success());
        let mut r = report(&out);
        mojet::harness::strip_timing(&mut r);
        r["config"]["parallel"] = Value::Null;
        reports.push(r);
        for f in ["ranks.csv", "jetsim.csv"] {
            assert!(out.join(f).exists());
        }
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn sweep_and_cost_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"S": 5, "sweep": {"target": "pipeline_classification", "probe_grid": [8, 24]},
            "cost": {"target": "pipeline_classification", "n_jet": 10, "probe_grid": [4, 8]},
            "n_train": 200, "n_test": 60}"#,
    );
    let out = tmp.path().join("sweep");
    let ok = mojet()
        .args(["sweep_probes", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(ok.success());
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);

    let out = tmp.path().join("cost");
    let ok = mojet()
        .args(["cost", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(ok.success());
    let rows = report(&out)["cost_table"].as_array().unwrap().clone();
    let passes: Vec<u64> = rows
        .iter()
        .map(|r| r["probe_passes"].as_u64().unwrap())
        .collect();
    assert_eq!(passes, vec![10 * 4 * 2, 10 * 8 * 2]);
    assert!(out.join("cost.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let bad = write_config(tmp.path(), r#"{"sigma": -1.0}"#);
    let s = mojet()
        .args(["linreg", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert_eq!(s.code(), Some(2));

    let unknown = write_config(tmp.path(), r#"{"no_such_field": 1}"#);
    let s = mojet()
        .args(["linreg", "--config"])
        .arg(&unknown)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert_eq!(s.code(), Some(2));

    let missing = write_config(tmp.path(), r#"{"data_path": "/nonexistent/digits.csv"}"#);
    let s = mojet()
        .args(["digits", "--config"])
        .arg(&missing)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert_eq!(s.code(), Some(4));

    // Fewer probes than input dimensions with no ridge cannot be solved.
    let rank = write_config(tmp.path(), r#"{"J": 4, "ridge": {"kind": "zero"}}"#);
    let s = mojet()
        .args(["linreg", "--config"])
        .arg(&rank)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert_eq!(s.code(), Some(3));
}

#[test]
fn print_config_shows_resolved_defaults() {
    let out = mojet()
        .args(["digits", "--print-config", "--out", "unused"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["d"], 64);
    assert_eq!(cfg["J"], 32);
    assert!(cfg["models"]["mlp"]["architecture"].is_array());
}
