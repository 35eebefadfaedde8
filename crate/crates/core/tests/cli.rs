use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergodic-reflect"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn spectrum_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["spectrum"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["correlations.csv", "wiener.csv", "rigidity.csv", "psd.json", "spectrum.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn invalid_family_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["spectrum", "--spectrum", r#"{"name":"arc","epsilon":-1}"#]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid parameter"));
}

#[test]
fn construct_prints_peak_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["construct", "--k", "7"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("8660"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cutoffs"]["values"], serde_json::json!([1, 3, 10, 41, 206, 1237, 8660]));
}

#[test]
fn construct_with_oracle_reports_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["construct", "--spectrum", r#"{"name":"arc","epsilon":0.5}"#, "--k", "3", "--oracle", "--format", "json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let oracle = &report["diagnostics"]["oracle"];
    assert!(oracle["max_a_delta"].as_f64().unwrap() <= 1e-8);
    assert!(oracle["max_cross_delta"].as_f64().unwrap() <= 1e-8);
    assert!(!dir.path().join("series_a.csv").exists());
}

#[test]
fn oracle_cap_too_small_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["construct", "--k", "5", "--oracle", "--oracle-cap", "100"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(!stdout.contains("FAIL"));
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn verify_arc_depth_four_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify", "--spectrum", r#"{"name":"arc","epsilon":0.5}"#, "--k", "4"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
}

#[test]
fn verify_corrupted_table_names_psd() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["verify", "--spectrum", r#"{"name":"table","values":[1.0,1.2]}"#]);
    assert_ne!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("psd")), "{stdout}");
}

#[test]
fn simulate_single_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["simulate", "--n", "1", "--samples", "50000", "--seed", "3"]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("estimate.json")).unwrap()).unwrap();
    assert_eq!(report["exact"], 1.0);
    assert!(dir.path().join("moments.csv").exists());
}

#[test]
fn simulate_truncation_bias_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["simulate", "--samples", "100000", "--truncation", "8", "--seed", "11"],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("estimate.json")).unwrap()).unwrap();
    assert!(report["truncated"]["bias"].as_f64().unwrap().abs() <= 1e-3);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"spectrum": {"name": "arc", "epsilon": 1.0}, "k": 2, "format": "csv",
            "spectrum_report": {"lags": 3}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ergodic-reflect"))
        .args(["spectrum", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("out/correlations.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(!dir.path().join("out/spectrum.json").exists());
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--samples", "20000", "--seed", "42"];
    assert!(run(a.path(), &args).status.success());
    assert!(run(b.path(), &args).status.success());
    for name in ["estimate.json", "moments.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
