use std::path::Path;
use std::process::{Command, Output};

use linenarrow_cli::ingest::ingest;

fn linenarrow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linenarrow"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn small_spectrum(path: &Path) {
    let out = linenarrow(&[
        "synth",
        "--out",
        path.to_str().unwrap(),
        "--peaks",
        "40:8,70:6",
        "--gamma",
        "3",
        "--noise-sd",
        "0.02",
        "--seed",
        "2",
        "--set",
        "grid_len=128",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn narrow(input: &Path, output: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "narrow",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--particles",
        "60",
        "--seed",
        "5",
        "--noise-sd",
        "0.02",
        "--set",
        "m_hi=40",
        "--set",
        "peak_samples=500",
    ];
    args.extend_from_slice(extra);
    linenarrow(&args)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn synth_then_ingest_check() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("y.csv");
    small_spectrum(&input);
    let parsed = ingest(&input).unwrap();
    assert_eq!(parsed.spectrum.len(), 128);
    assert!(!parsed.report.resampled);
    let out = linenarrow(&["ingest-check", input.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("points: 128"));
}

#[test]
fn narrow_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("y.csv");
    small_spectrum(&input);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = narrow(&input, d, &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(manifest(&a)["status"], "ok");
    for f in [
        "particles.csv",
        "smc_trace.csv",
        "counts.csv",
        "lgcp_fit.csv",
        "peak_histogram.csv",
        "peak_table.csv",
        "n_posterior.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn malformed_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "1,2\n2,oops\n3,4\n4,5\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = narrow(&input, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(3));
    let m = manifest(&out_dir);
    assert_eq!(m["status"], "failed");
    assert_eq!(m["failed_stage"], "ingest");

    let missing = linenarrow(&["ingest-check", dir.path().join("nope.csv").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn invalid_config_exits_2() {
    let out = linenarrow(&["ingest-check", "x.csv", "--set", "particles=-4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = linenarrow(&["ingest-check", "x.csv", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_failure_exits_4_and_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("y.csv");
    small_spectrum(&input);
    let out_dir = dir.path().join("out");
    // Truncation lengths beyond the grid are rejected by the sampler.
    let out = narrow(&input, &out_dir, &["--set", "m_hi=600"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(manifest(&out_dir)["failed_stage"], "smc");
}

#[test]
fn injected_uniform_ranks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = linenarrow(&[
        "sbc",
        "--inject-uniform-ranks",
        "--output",
        dir.path().to_str().unwrap(),
        "--replicates",
        "40",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sbc_summary.json")).unwrap()).unwrap();
    assert!(summary["p_value"].as_f64().unwrap() > 0.99);
    let ranks = std::fs::read_to_string(dir.path().join("sbc_ranks.csv")).unwrap();
    assert_eq!(ranks.lines().count(), 21);
}

#[test]
fn small_calibration_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = linenarrow(&[
        "sbc",
        "--output",
        dir.path().to_str().unwrap(),
        "--replicates",
        "20",
        "--particles",
        "40",
        "--seed",
        "1",
        "--set",
        "grid_len=96",
        "--set",
        "m_hi=30",
        "--set",
        "peak_samples=200",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sbc_summary.json")).unwrap()).unwrap();
    let p = summary["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let rows = std::fs::read_to_string(dir.path().join("sbc_replicates.csv")).unwrap();
    assert_eq!(
        rows.lines().count() + summary["failed_replicates"].as_array().unwrap().len(),
        21
    );
}
