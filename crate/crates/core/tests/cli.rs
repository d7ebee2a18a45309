mod common;

use std::process::{Command, Output};

use common::fixture;
use paircal::model::SummaryKind;
use paircal::report::{parse_json_report, EstimateLevel, RowMethod};

fn paircal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paircal")).args(args).output().expect("binary runs")
}

fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn summary_text_report_shows_published_rows() {
    let out = paircal(&["analyze", "--summaries", &path("trial_summaries.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("Pair summaries (crude)"));
    assert!(text.contains("delta    -0.8  -0.1  0.3  3.8  4.5  -2.6  -1.3"));
    assert!(text.contains("R^2 = 0.219"));
}

#[test]
fn json_output_parses_back() {
    let out = paircal(&["analyze", "--summaries", &path("trial_summaries.csv"), "--format", "json"]);
    assert!(out.status.success());
    let report = parse_json_report(&out.stdout).unwrap();
    let row = report.effect(SummaryKind::Calibrated, EstimateLevel::FirstLevel, RowMethod::Permutation).unwrap();
    assert_eq!(row.p_value, Some(2.0 / 128.0));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = [
        "analyze",
        "--patients",
        &path("patients.csv"),
        "--clusters",
        &path("clusters.csv"),
        "--schema",
        &path("schema.json"),
        "--estimators",
        "first_level,two_level,permutation_mc",
        "--seed",
        "11",
        "--mc-draws",
        "2000",
        "--format",
        "json",
    ];
    let a = paircal(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, paircal(&args).stdout);
}

#[test]
fn csv_bundle_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("report");
    let out = paircal(&[
        "analyze",
        "--summaries",
        &path("trial_crude.csv"),
        "--format",
        "csv-bundle",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["pairs.csv", "effects.csv", "dependence.csv", "dependence_fit.csv"] {
        assert!(out_dir.join(name).is_file(), "{name} missing");
    }
    let dependence = std::fs::read_to_string(out_dir.join("dependence.csv")).unwrap();
    assert_eq!(dependence.lines().count(), 1 + 7);
    assert!(!out_dir.join("imbalance.csv").exists());
}

#[test]
fn patient_input_with_config_file() {
    let out = paircal(&[
        "analyze",
        "--patients",
        &path("patients.csv"),
        "--clusters",
        &path("clusters.csv"),
        "--schema",
        &path("schema.json"),
        "--config",
        &path("config.json"),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = parse_json_report(&out.stdout).unwrap();
    assert_eq!(report.pair_table.len(), 8);
    assert!(report.imbalance_table.is_some());
    assert_eq!(report.provenance.config.sandwich, paircal::glm::SandwichFlavor::HC1);
}

#[test]
fn permute_prints_rows_as_json() {
    let out = paircal(&["permute", "--summaries", &path("trial_calibrated.csv"), "--kind", "crude"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows, serde_json::json!([]));

    let out = paircal(&["permute", "--summaries", &path("trial_calibrated.csv")]);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0]["p_value"], serde_json::json!(0.015625));
    assert_eq!(rows[0]["permutations"], serde_json::json!(128));
}

#[test]
fn simulate_reports_limit_and_estimate() {
    let out = paircal(&["simulate-result1", "--seed", "1", "--pairs", "10000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let plim = v["plim"].as_f64().unwrap();
    assert!((plim + 0.19947).abs() < 1e-4);
    assert_eq!(v["simulation"]["num_pairs"], serde_json::json!(10000));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(paircal(&["analyze"]).status.code(), Some(1));
    assert_eq!(paircal(&["simulate-result1"]).status.code(), Some(1));
    let out = paircal(&["analyze", "--summaries", &path("trial_crude.csv"), "--format", "xml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("xml"));
}

#[test]
fn help_exits_cleanly() {
    let out = paircal(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("simulate-result1"));
}

#[test]
fn bad_input_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.csv");
    std::fs::write(&file, "pair_id,delta,sqrt_v\n1,0.5,1.0\n2,oops,1.0\n").unwrap();
    let out = paircal(&["analyze", "--summaries", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv:3:"), "{err}");
}

#[test]
fn negative_variance_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("neg.csv");
    std::fs::write(&file, "pair_id,delta,variance\n1,0.5,1.0\n2,0.1,-1.0\n3,0.2,1.0\n").unwrap();
    let out = paircal(&["analyze", "--summaries", file.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn monte_carlo_without_seed_is_a_config_error() {
    let out = paircal(&["analyze", "--summaries", &path("trial_crude.csv"), "--estimators", "permutation_mc"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}
