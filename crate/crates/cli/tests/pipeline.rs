//! End-to-end tests that drive the compiled binary against the bundled
//! 30-day fixture dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixtures directory missing")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Copies the fixture inputs and config into `dst` so runs write their
/// artifacts under the temp dir (out_dir resolves relative to the config).
fn copy_fixtures(dst: &Path) {
    for name in [
        "pipeline.toml",
        "trips.csv",
        "weather.csv",
        "us_federal_holidays_2018_2019.csv",
    ] {
        fs::copy(fixture_dir().join(name), dst.join(name)).expect("copy fixture file");
    }
}

fn bikecluster(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bikecluster"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("failed to spawn binary")
}

fn run_ok(config: &Path, args: &[&str]) {
    let out = bikecluster(config, args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

const ALL_ARTIFACTS: [&str; 14] = [
    "analysis_report.json",
    "cleaning_report.json",
    "clustering.json",
    "correlation.csv",
    "daily_table.csv",
    "feature_matrix.csv",
    "feature_selection.json",
    "plot_scatter.csv",
    "plot_seasons.csv",
    "plot_workday.csv",
    "run_manifest.json",
    "standardization.json",
    "validation_curves.csv",
    "validation_report.json",
];

#[test]
fn run_output_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    run_ok(&config, &["run"]);

    for name in [
        "cleaning_report.json",
        "daily_table.csv",
        "feature_selection.json",
    ] {
        let got = read(&tmp.path().join("out").join(name));
        let want = read(&golden_dir().join(name));
        assert_eq!(got, want, "{name} diverged from its golden copy");
    }
}

#[test]
fn stage_commands_compose_to_the_same_artifacts_as_run() {
    let staged = tempfile::tempdir().unwrap();
    copy_fixtures(staged.path());
    let staged_config = staged.path().join("pipeline.toml");
    for stage in ["ingest", "validate", "cluster", "report"] {
        run_ok(&staged_config, &[stage]);
    }

    let whole = tempfile::tempdir().unwrap();
    copy_fixtures(whole.path());
    let whole_config = whole.path().join("pipeline.toml");
    run_ok(&whole_config, &["run"]);

    for name in ALL_ARTIFACTS {
        let a = read(&staged.path().join("out").join(name));
        let b = read(&whole.path().join("out").join(name));
        assert_eq!(a, b, "{name} differs between staged and single-shot runs");
    }
}

#[test]
fn missing_input_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    fs::remove_file(tmp.path().join("trips.csv")).unwrap();
    let config = tmp.path().join("pipeline.toml");

    let out = bikecluster(&config, &["ingest"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("trips.csv"),
        "stderr should name the missing file, got: {stderr}"
    );
}

#[test]
fn report_before_cluster_fails_with_guidance() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    run_ok(&config, &["ingest"]);

    let out = bikecluster(&config, &["report"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("cluster"),
        "stderr should point at the missing stage, got: {stderr}"
    );
}

#[test]
fn k_override_controls_cluster_count() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    run_ok(&config, &["ingest"]);
    run_ok(&config, &["--k", "4", "cluster"]);

    let text = read(&tmp.path().join("out/clustering.json"));
    let value: serde_json::Value = serde_json::from_slice(&text).unwrap();
    assert_eq!(value["k"], 4);
    assert_eq!(value["centroids_standardized"].as_array().unwrap().len(), 4);
    let mut seen = [false; 4];
    for entry in value["assignments"].as_array().unwrap() {
        seen[entry["cluster"].as_u64().unwrap() as usize] = true;
    }
    assert!(seen.iter().all(|&s| s), "every cluster should be non-empty");
}

#[test]
fn k_range_override_narrows_validation() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    run_ok(&config, &["ingest"]);
    run_ok(&config, &["--k-range", "2..2", "validate"]);

    let text = read(&tmp.path().join("out/validation_report.json"));
    let value: serde_json::Value = serde_json::from_slice(&text).unwrap();
    assert_eq!(value["k_values"].as_array().unwrap().len(), 1);
    assert_eq!(value["k_values"][0], 2);
    assert_eq!(value["wss_curve"].as_array().unwrap().len(), 1);
    assert!(value["silhouette_curve"][0].is_number());
    assert_eq!(value["recommended"]["gap"], 2);
    assert!(value["recommended"]["elbow"].is_null());
}

#[test]
fn standardize_subset_leaves_excluded_features_raw() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    let mut toml = fs::read_to_string(&config).unwrap();
    toml.push_str(
        "\n[features]\nstandardize = [\"temperature\", \"precipitation\", \
         \"wind_speed\", \"cloud_cover\", \"relative_humidity\"]\n",
    );
    fs::write(&config, toml).unwrap();
    run_ok(&config, &["ingest"]);

    let text = read(&tmp.path().join("out/standardization.json"));
    let value: serde_json::Value = serde_json::from_slice(&text).unwrap();
    assert_eq!(value["features"]["count"]["mean"], 0.0);
    assert_eq!(value["features"]["count"]["std"], 1.0);
    assert_ne!(value["features"]["temperature"]["std"], 1.0);

    // The matrix carries raw trip counts while the rest is z-scored.
    let matrix = String::from_utf8(read(&tmp.path().join("out/feature_matrix.csv"))).unwrap();
    let first_row = matrix.lines().nth(1).unwrap();
    let count_cell: f64 = first_row.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(count_cell, 3.0);
}

#[test]
fn standardize_subset_rejects_unknown_features() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    let mut toml = fs::read_to_string(&config).unwrap();
    toml.push_str("\n[features]\nstandardize = [\"max_temperature\"]\n");
    fs::write(&config, toml).unwrap();

    let out = bikecluster(&config, &["ingest"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("max_temperature"),
        "stderr should name the unknown feature, got: {stderr}"
    );
}

#[test]
fn seed_override_changes_the_digest_but_not_the_schema() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    run_ok(&config, &["--seed", "7", "ingest"]);

    let text = read(&tmp.path().join("out/cleaning_report.json"));
    let value: serde_json::Value = serde_json::from_slice(&text).unwrap();
    assert_eq!(value["seed"], 7);
    let golden: serde_json::Value =
        serde_json::from_slice(&read(&golden_dir().join("cleaning_report.json"))).unwrap();
    assert_ne!(value["config_digest"], golden["config_digest"]);
    // cleaning itself is seed-independent
    assert_eq!(value["n_rows"], golden["n_rows"]);
    assert_eq!(value["feature_names"], golden["feature_names"]);
}
