use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SPEEDUP_PARADOX: &str =
    r#"{"lambda":{"prefix":[0.01,0.01,5],"cycle":[0]},"mu1":0.5,"mu2":1}"#;
const THRESHOLD3: &str = r#"{"lambda":{"prefix":[1,1,1,1],"cycle":[0]},"mu1":2,"mu2":0.5}"#;
const THRESHOLD1: &str = r#"{"lambda":{"prefix":[1,1],"cycle":[0]},"mu1":0.9,"mu2":1.1}"#;

fn tandem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tandem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = tandem(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok_stdout(args)).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn analyze_reports_witness() {
    let v = json(&["analyze", "--spec", THRESHOLD3]);
    assert_eq!(v["status"], "Stable");
    assert_eq!(v["witness"], "T6ii");

    let v = json(&["analyze", "--spec", SPEEDUP_PARADOX]);
    assert_eq!(v["status"], "Unstable");
    assert!(v["criteria"]["limsup_E"].as_f64().unwrap() > 0.5);
}

#[test]
fn analyze_reads_spec_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    fs::write(&path, THRESHOLD3).unwrap();
    let v = json(&["analyze", "--spec", path.to_str().unwrap()]);
    assert_eq!(v["witness"], "T6ii");
}

#[test]
fn exit_codes() {
    let out = tandem(&[
        "analyze",
        "--spec",
        r#"{"lambda":{"prefix":[0],"cycle":[1]},"mu1":1,"mu2":1}"#,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate: λ(0)=0"));

    for bad in [
        vec!["analyze", "--spec", "{not json"],
        vec![
            "analyze",
            "--spec",
            r#"{"lambda":{"cycle":[1]},"mu1":1,"mu2":1,"extra":0}"#,
        ],
        vec!["analyze", "--spec", "/no/such/spec.json"],
        vec!["threshold", "--mu1", "1"],
        vec!["threshold", "--mu1", "1", "--mu2", "1", "--bogus"],
        vec!["threshold", "--mu1", "0", "--mu2", "1"],
        vec!["frobnicate"],
    ] {
        assert_eq!(tandem(&bad).status.code(), Some(1), "{bad:?}");
    }

    let out = tandem(&[
        "stationary",
        "--spec",
        THRESHOLD1,
        "--m1",
        "200",
        "--m2",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(tandem(&["--help"]).status.code(), Some(0));
}

#[test]
fn threshold_answer_shape() {
    let v = json(&["threshold", "--mu1", "0.9", "--mu2", "1.1"]);
    assert_eq!(v, serde_json::json!({"kind": "UpToKmax", "K_max": 10}));
    let rows = csv_rows(&ok_stdout(&[
        "threshold",
        "--mu1",
        "2",
        "--mu2",
        "0.5",
        "--format",
        "csv",
    ]));
    assert_eq!(rows[0][0], "AllFiniteK");
}

#[test]
fn phase_diagram_default_grid() {
    let rows = csv_rows(&ok_stdout(&["phase-diagram"]));
    assert_eq!(rows.len(), 3600);
    let mut seen = std::collections::BTreeSet::new();
    for r in &rows {
        let (mu1, mu2): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        let label = r[2].as_str();
        seen.insert(label.to_string());
        if mu1 > 1.0 && mu2 > 1.0 {
            assert_eq!(label, "A1", "{mu1},{mu2}");
        }
        if mu1 >= mu2 && mu1.min(mu2) <= 1.0 {
            assert_eq!(label, "A2", "{mu1},{mu2}");
        }
    }
    assert_eq!(seen.len(), 4);
}

#[test]
fn sensitivity_flips_past_the_input_rate() {
    let spec = r#"{"lambda":{"prefix":[2],"cycle":[0]},"mu1":1,"mu2":1}"#;
    let rows = csv_rows(&ok_stdout(&[
        "sensitivity",
        "--spec",
        spec,
        "--axis",
        "mu2",
        "--min",
        "0.5",
        "--max",
        "4",
        "--step",
        "0.25",
    ]));
    for r in &rows {
        let mu: f64 = r[0].parse().unwrap();
        if mu < 1.9 {
            assert_eq!(r[1], "Stable", "mu2={mu}");
        } else if mu > 2.1 {
            assert_eq!(r[1], "Unstable", "mu2={mu}");
        }
    }
}

#[test]
fn lyapunov_certificate() {
    let v = json(&["lyapunov", "--spec", THRESHOLD1]);
    assert_eq!(v["outcome"], "certified");
    assert!(v["r"].as_f64().unwrap() > 0.0);
    assert!(v["max_drift_outside"].as_f64().unwrap() < 0.0);

    let rows = csv_rows(&ok_stdout(&[
        "lyapunov", "--spec", THRESHOLD1, "--format", "csv",
    ]));
    assert!(!rows.is_empty());
    let n0 = v["n0"].as_u64().unwrap();
    for r in rows.iter().filter(|r| r[0].parse::<u64>().unwrap() > n0) {
        assert!(r[1].parse::<f64>().unwrap() < 0.0);
    }

    let v = json(&["lyapunov", "--spec", SPEEDUP_PARADOX]);
    assert_eq!(v["outcome"], "criterionFails");
}

#[test]
fn stationary_csv_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pi.csv");
    let diag = dir.path().join("diag.json");
    ok_stdout(&[
        "stationary",
        "--spec",
        THRESHOLD1,
        "--m1",
        "40",
        "--m2",
        "30",
        "--output",
        out.to_str().unwrap(),
        "--diagnostics",
        diag.to_str().unwrap(),
    ]);
    let rows = csv_rows(&fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 41 * 31);
    let total: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let d: Value = serde_json::from_str(&fs::read_to_string(&diag).unwrap()).unwrap();
    assert!(d["residual"].as_f64().unwrap() < 1e-8);
    assert!(d["escape_mass"].as_f64().unwrap() >= 0.0);

    let v = json(&[
        "stationary",
        "--spec",
        THRESHOLD1,
        "--m1",
        "10",
        "--m2",
        "10",
        "--format",
        "json",
    ]);
    assert_eq!(v["pi"].as_array().unwrap().len(), 121);
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let series = dir.path().join(format!("{name}.series.csv"));
        ok_stdout(&[
            "simulate",
            "--spec",
            THRESHOLD1,
            "--horizon",
            "2000",
            "--reps",
            "5",
            "--seed",
            seed,
            "--output",
            out.to_str().unwrap(),
            "--series",
            series.to_str().unwrap(),
        ]);
        (read(&out), read(&series))
    };
    let a = run("a.json", "11");
    let b = run("b.json", "11");
    let c = run("c.json", "12");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);

    let v: Value = serde_json::from_slice(&a.0).unwrap();
    let reps = v["replications"].as_array().unwrap();
    assert_eq!(reps.len(), 5);
    assert_eq!(reps[3]["seed"], 14);
    assert_eq!(v["empirical"]["verdict"], "LooksStable");
    let series = csv_rows(std::str::from_utf8(&a.1).unwrap());
    assert!(!series.is_empty() && series.len() <= 100_000);
}

#[test]
fn simulate_variant_and_initial_state() {
    let v = json(&[
        "simulate",
        "--spec",
        THRESHOLD1,
        "--horizon",
        "50",
        "--init",
        "3,4",
        "--variant",
        "saturatedN:2",
    ]);
    assert_eq!(
        v["config"]["initial"],
        serde_json::json!({"x1": 3, "x2": 4})
    );
    let out = tandem(&["simulate", "--spec", THRESHOLD1, "--variant", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "command": "simulate",
            "spec": serde_json::from_str::<Value>(THRESHOLD1).unwrap(),
            "horizon": 500,
            "reps": 3,
            "seed": 5,
            "format": "csv",
        })
        .to_string(),
    )
    .unwrap();
    let from_file = ok_stdout(&["--config", cfg.to_str().unwrap()]);
    let from_flags = ok_stdout(&[
        "simulate",
        "--spec",
        THRESHOLD1,
        "--horizon",
        "500",
        "--reps",
        "3",
        "--seed",
        "5",
        "--format",
        "csv",
    ]);
    assert_eq!(from_file, from_flags);

    // explicit flags override the file
    fs::write(&cfg, r#"{"mu1": 0.9, "mu2": 5}"#).unwrap();
    let v = json(&[
        "threshold",
        "--config",
        cfg.to_str().unwrap(),
        "--mu2",
        "1.1",
    ]);
    assert_eq!(v["K_max"], 10);

    fs::write(&cfg, r#"{"mu1": 0.9, "mu2": 1.1, "typo": 1}"#).unwrap();
    assert_eq!(
        tandem(&["threshold", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}
