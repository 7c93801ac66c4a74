//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N: PASS` line (run with `--nocapture` to see them) and
//! enforcing its stated runtime budget.
//!
//! Oracles here are computed inside the tests from first principles
//! (hand arithmetic, exhaustive enumeration, closed-form sums) rather
//! than trusted from any implementation under test.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bikecluster_core::analysis::{flag_anomalies, seasonal_averages, SeasonDefinition};
use bikecluster_core::ingest::{DailyRow, DailyTable};
use bikecluster_core::kmeans::{hartigan_wong, hartigan_wong_traced, KMeansConfig};
use bikecluster_core::preprocess::{
    pearson_correlation, select_features, standardize, FeatureMatrix,
};
use bikecluster_core::validation::{
    silhouette_width, validate, GapRule, KRange, ValidationOptions,
};
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn synthetic_dates(n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|i| date(2018, 1, 1) + chrono::Days::new(i as u64))
        .collect()
}

fn finish(criterion: usize, name: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "criterion {criterion} ({name}): FAIL — took {elapsed:?}, budget {budget:?}"
    );
    println!("criterion {criterion} ({name}): PASS in {elapsed:?}");
}

// --- criterion 1: seasonal averages from published totals ---------------

/// `total` trips spread over `days` days as integers summing exactly.
fn spread(total: u64, days: u64) -> Vec<u64> {
    let base = total / days;
    let rem = total % days;
    (0..days)
        .map(|i| if i < rem { base + 1 } else { base })
        .collect()
}

#[test]
fn criterion_1_seasonal_averages_from_published_totals() {
    let start = Instant::now();

    let seasons = SeasonDefinition::new(
        [
            "winter", "winter", "spring", "spring", "spring", "summer", "summer", "summer",
            "autumn", "autumn", "autumn", "winter",
        ]
        .map(str::to_string)
        .to_vec(),
    )
    .unwrap();

    // (season, total trips, days observed)
    let targets = [
        ("winter", 999_290u64, 180u64),
        ("spring", 1_881_527, 184),
        ("summer", 1_551_109, 122),
        ("autumn", 1_792_486, 182),
    ];

    let mut counts: std::collections::BTreeMap<&str, Vec<u64>> = targets
        .iter()
        .map(|(s, total, days)| (*s, spread(*total, *days)))
        .collect();

    // Walk two calendar years; summer stops after its 122nd day.
    let mut rows = Vec::new();
    let mut day = date(2018, 1, 1);
    let end = date(2019, 12, 31);
    while day <= end {
        let season = seasons.season_of(day);
        let remaining = counts.get_mut(season).unwrap();
        if !remaining.is_empty() {
            rows.push(DailyRow {
                date: day,
                count: remaining.remove(0),
                weather: vec![0.0],
            });
        }
        day = day + chrono::Days::new(1);
    }
    assert!(counts.values().all(|c| c.is_empty()), "unplaced counts");
    assert_eq!(rows.len(), 668);

    let table = DailyTable::new(vec!["temperature".to_string()], rows).unwrap();
    let report = seasonal_averages(&table, &seasons).unwrap();

    assert_eq!(report.seasons.len(), 4);
    // First-appearance order from January.
    let order: Vec<&str> = report.seasons.iter().map(|s| s.season.as_str()).collect();
    assert_eq!(order, ["winter", "spring", "summer", "autumn"]);

    for (season, total, days) in targets {
        let stat = report
            .seasons
            .iter()
            .find(|s| s.season == season)
            .unwrap_or_else(|| panic!("{season} missing"));
        assert_eq!(stat.observations, days as usize);
        assert_eq!(stat.total_trips, total);
        let expected_rounded = match season {
            "winter" => 5552,
            "spring" => 10226,
            "summer" => 12714,
            "autumn" => 9849,
            _ => unreachable!(),
        };
        assert_eq!(
            stat.average_rounded, expected_rounded,
            "{season}: {:.4} should display as {expected_rounded}",
            stat.average_per_day
        );
    }

    finish(1, "seasonal averages", start, Duration::from_secs(1));
}

// --- criterion 2: brute-force oracle equivalence for k-means ------------

fn random_instance(rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let n = rng.gen_range(4..=8);
    let d = rng.gen_range(1..=2);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| f64::from(rng.gen_range(-8i32..=8)) / 2.0)
                .collect()
        })
        .collect();
    let names = (0..d).map(|j| format!("f{j}")).collect();
    FeatureMatrix::new(names, synthetic_dates(n), rows).unwrap()
}

/// Global optimum for k = 2 by exhaustive assignment enumeration.
fn brute_force_k2(matrix: &FeatureMatrix) -> f64 {
    let rows = matrix.rows();
    let n = rows.len();
    let d = matrix.n_features();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let mut wss = 0.0;
        for side in 0..2u32 {
            let members: Vec<&Vec<f64>> = (0..n)
                .filter(|&i| ((mask >> i) & 1) == side)
                .map(|i| &rows[i])
                .collect();
            let m = members.len() as f64;
            let mut mean = vec![0.0; d];
            for row in &members {
                for (a, v) in mean.iter_mut().zip(row.iter()) {
                    *a += v;
                }
            }
            for a in &mut mean {
                *a /= m;
            }
            for row in &members {
                wss += row
                    .iter()
                    .zip(&mean)
                    .map(|(v, c)| (v - c) * (v - c))
                    .sum::<f64>();
            }
        }
        if wss < best {
            best = wss;
        }
    }
    best
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[test]
fn criterion_2_kmeans_matches_brute_force_oracle() {
    let start = Instant::now();
    let mut matched = 0usize;

    for instance in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + instance);
        let matrix = random_instance(&mut rng);
        let optimum = brute_force_k2(&matrix);

        let config = KMeansConfig::new(2, 40_000 + instance);
        let (result, traces) = hartigan_wong_traced(&matrix, &config).unwrap();

        // Never better than the global optimum.
        assert!(
            result.total_wss >= optimum - 1e-9,
            "instance {instance}: WSS {} beats exhaustive optimum {optimum}",
            result.total_wss
        );
        if (result.total_wss - optimum).abs() <= 1e-9 {
            matched += 1;
        }

        // Fixed point: no single-point transfer can still lower WSS.
        assert!(result.converged, "instance {instance} did not converge");
        let k = result.centroids.len();
        let mut sizes = vec![0usize; k];
        for &a in &result.assignments {
            sizes[a] += 1;
        }
        for (i, row) in matrix.rows().iter().enumerate() {
            let r = result.assignments[i];
            if sizes[r] == 1 {
                continue;
            }
            let lhs =
                sizes[r] as f64 * sq_dist(row, &result.centroids[r]) / (sizes[r] as f64 - 1.0);
            for (s, &size) in sizes.iter().enumerate() {
                if s == r {
                    continue;
                }
                let rhs =
                    size as f64 * sq_dist(row, &result.centroids[s]) / (size as f64 + 1.0);
                assert!(
                    lhs <= rhs + 1e-9,
                    "instance {instance}: converged solution admits an improving move"
                );
            }
        }

        // Monotone WSS along every completed pass.
        for trace in &traces {
            for step in trace.wss_after_each_step.windows(2) {
                assert!(
                    step[1] <= step[0] + 1e-9 * step[0].abs().max(1.0),
                    "instance {instance}: WSS rose within a pass"
                );
            }
        }
    }

    assert!(
        matched >= 95,
        "only {matched}/100 instances reached the exhaustive optimum"
    );
    println!("  optimum reached on {matched}/100 instances");
    finish(2, "k-means oracle equivalence", start, Duration::from_secs(10));
}

// --- criterion 3: k selection on well-separated Gaussian blobs ----------

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] avoids ln(0).
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[test]
fn criterion_3_all_three_validators_recover_three_blobs() {
    let start = Instant::now();

    let centers: [[f64; 5]; 3] = [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [8.0, 8.0, 8.0, 8.0, 8.0],
        [8.0, -8.0, 8.0, -8.0, 8.0],
    ];
    // Separation in units of the blob standard deviation (1.0 here).
    for i in 0..3 {
        for j in (i + 1)..3 {
            let gap = sq_dist(&centers[i], &centers[j]).sqrt();
            assert!(gap >= 6.0, "centers {i},{j} only {gap:.2} apart");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut rows = Vec::with_capacity(300);
    for center in &centers {
        for _ in 0..100 {
            rows.push(center.iter().map(|c| c + gaussian(&mut rng)).collect());
        }
    }
    let names = (0..5).map(|j| format!("f{j}")).collect();
    let matrix = FeatureMatrix::new(names, synthetic_dates(300), rows).unwrap();

    let options = ValidationOptions {
        k_range: KRange::new(1, 6).unwrap(),
        bootstrap_count: 50,
        gap_rule: GapRule::OneStandardError,
        kmeans: KMeansConfig::new(1, 777),
    };
    let report = validate(&matrix, &options).unwrap();

    assert_eq!(report.recommended.gap, 3, "gap rule missed the blob count");
    assert_eq!(report.recommended.silhouette, Some(3));
    assert_eq!(report.recommended.elbow, Some(3));

    let s3 = report.silhouette_curve[2].expect("silhouette defined at k = 3");
    assert!(s3 > 0.7, "average silhouette at k = 3 was {s3:.4}");

    finish(3, "blob k selection", start, Duration::from_secs(30));
}

// --- criterion 4: silhouette hand check ----------------------------------

#[test]
fn criterion_4_silhouette_matches_hand_derivation() {
    let start = Instant::now();

    // Hand derivation for {0, 1, 10, 11} split {0,1} vs {10,11}.
    // Outer points (0 and 11): a = 1, b = mean(10, 11) = 10.5.
    // Inner points (1 and 10): a = 1, b = mean(9, 10) = 9.5.
    // (Taking b = 10 for the inner points — the far neighbour alone
    // instead of the mean — yields 0.9023809…, which is not what the
    // mean-distance definition produces.)
    let s_outer: f64 = (10.5 - 1.0) / 10.5;
    let s_inner: f64 = (9.5 - 1.0) / 9.5;
    let hand_average = (2.0 * s_outer + 2.0 * s_inner) / 4.0;
    assert!((hand_average - 359.0 / 399.0).abs() < 1e-15);

    let matrix = FeatureMatrix::new(
        vec!["x".to_string()],
        synthetic_dates(4),
        vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]],
    )
    .unwrap();
    let (scores, average) = silhouette_width(&matrix, &[0, 0, 1, 1]).unwrap();

    for (got, want) in scores.iter().zip([s_outer, s_inner, s_inner, s_outer]) {
        assert!((got - want).abs() < 1e-6, "per-point silhouette {got} vs {want}");
    }
    assert!(
        (average - hand_average).abs() < 1e-6,
        "average silhouette {average} vs hand value {hand_average}"
    );

    finish(4, "silhouette hand check", start, Duration::from_secs(1));
}

// --- criteria 5 and 8: the bundled fixture through the binary -----------

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixtures directory missing")
}

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

fn run_binary(config: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_bikecluster"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("failed to spawn binary");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn criterion_5_ingestion_fidelity_against_goldens() {
    let start = Instant::now();

    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let config = tmp.path().join("pipeline.toml");
    run_binary(&config, &["ingest"]);
    let out = tmp.path().join("out");

    // Expected per-day counts, June 1-27 2018. June days 28-30 fall out of
    // the join: the 28th has a missing humidity cell, the last two have no
    // trips. Sub-60-second rows are planted on days 1, 2, 4 and 7 and must
    // not count; day 1 also carries one exactly-60-second trip that must.
    let expected_counts = [
        3u64, 4, 1, 4, 8, 8, 3, 4, 2, 3, 4, 8, 9, 4, 1, 3, 4, 3, 8, 7, 2, 3, 4, 4, 3, 9, 1,
    ];
    let daily = fs::read_to_string(out.join("daily_table.csv")).unwrap();
    let mut lines = daily.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("date,count,"));
    let mut dates = Vec::new();
    let mut counts = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        dates.push(cells.next().unwrap().to_string());
        counts.push(cells.next().unwrap().parse::<u64>().unwrap());
    }
    assert_eq!(counts, expected_counts);
    let expected_dates: Vec<String> =
        (1..=27).map(|d| format!("2018-06-{d:02}")).collect();
    assert_eq!(dates, expected_dates);

    let cleaning: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("cleaning_report.json")).unwrap()).unwrap();
    assert_eq!(cleaning["dropped_columns"].as_array().unwrap().len(), 1);
    assert_eq!(cleaning["dropped_columns"][0]["name"], "wind_gust");
    assert_eq!(cleaning["dropped_columns"][0]["missing_fraction"], 0.6);
    assert_eq!(cleaning["excluded_columns"], serde_json::json!(["conditions"]));
    assert_eq!(cleaning["n_rows"], 27);

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in [
        "cleaning_report.json",
        "daily_table.csv",
        "feature_selection.json",
    ] {
        let got = fs::read(out.join(name)).unwrap();
        let want = fs::read(golden.join(name)).unwrap();
        assert_eq!(got, want, "{name} is not byte-identical to its golden copy");
    }

    finish(5, "ingestion fidelity", start, Duration::from_secs(1));
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let start = Instant::now();

    let mut outputs: Vec<std::collections::BTreeMap<String, Vec<u8>>> = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        copy_fixtures(tmp.path());
        run_binary(&tmp.path().join("pipeline.toml"), &["run"]);

        let mut files = std::collections::BTreeMap::new();
        for entry in fs::read_dir(tmp.path().join("out")).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            files.insert(name, fs::read(&path).unwrap());
        }
        outputs.push(files);
    }

    let [first, second] = &outputs[..] else { unreachable!() };
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>(),
        "the two runs produced different artifact sets"
    );
    assert!(first.keys().any(|k| k.ends_with(".json")));
    for (name, bytes) in first {
        assert_eq!(
            bytes,
            second.get(name).unwrap(),
            "{name} differs between two identically seeded runs"
        );
    }

    finish(8, "end-to-end determinism", start, Duration::from_secs(30));
}

// --- criterion 6: standardization and correlation properties ------------

#[test]
fn criterion_6_standardization_and_correlation_properties() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);

    for _ in 0..50 {
        let n = rng.gen_range(5..=40);
        let d = rng.gen_range(1..=6);
        let scales: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.gen_range(-2.0..3.0))).collect();
        let offsets: Vec<f64> = (0..d).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| offsets[j] + scales[j] * rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let names = (0..d).map(|j| format!("f{j}")).collect();
        let matrix = FeatureMatrix::new(names, synthetic_dates(n), rows).unwrap();

        let standardized = standardize(&matrix).unwrap();
        for j in 0..d {
            let col: Vec<f64> = standardized.rows().iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            // Sample standard deviation, the convention used throughout.
            let var =
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            assert!(mean.abs() < 1e-9, "column mean {mean} after standardization");
            assert!(
                (var.sqrt() - 1.0).abs() < 1e-9,
                "column std {} after standardization",
                var.sqrt()
            );
        }

        let corr = pearson_correlation(&matrix).unwrap();
        for i in 0..d {
            assert_eq!(corr.values[i][i], 1.0);
            for j in 0..d {
                let r = corr.values[i][j];
                assert_eq!(r, corr.values[j][i], "correlation not symmetric");
                assert!((-1.0..=1.0).contains(&r), "correlation {r} out of range");
            }
        }
    }

    // Redundancy selection keeps exactly the trio member most correlated
    // with the trip count; here that is max_temperature, so survival is
    // decided by correlation strength, not column order.
    let n = 30;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let maxt = 70.0 + 12.0 * ((i as f64) * 0.7).sin() + (i % 3) as f64;
        let temp = maxt - 8.0 + 1.5 * ((i as f64) * 1.3).sin();
        let mint = maxt - 16.0 + 1.5 * ((i as f64) * 2.1).cos();
        let count = (3.0 * maxt).round() as u64;
        rows.push(DailyRow {
            date: date(2018, 6, 1) + chrono::Days::new(i as u64),
            count,
            weather: vec![temp, maxt, mint],
        });
    }
    let table = DailyTable::new(
        ["temperature", "max_temperature", "min_temperature"]
            .map(str::to_string)
            .to_vec(),
        rows,
    )
    .unwrap();
    let full = FeatureMatrix::from_daily(&table, true, table.feature_names()).unwrap();
    let corr = pearson_correlation(&full).unwrap();
    let (matrix, report) = select_features(&table, &corr, 0.9, true).unwrap();

    assert_eq!(
        report.groups,
        vec![
            ["temperature", "max_temperature", "min_temperature"]
                .map(str::to_string)
                .to_vec()
        ]
    );
    assert_eq!(report.retained, vec!["max_temperature".to_string()]);
    assert_eq!(
        report.dropped,
        ["temperature", "min_temperature"].map(str::to_string).to_vec()
    );
    assert_eq!(
        matrix.feature_names(),
        ["count", "max_temperature"].map(str::to_string)
    );

    finish(6, "standardization and correlation", start, Duration::from_secs(5));
}

// --- criterion 7: storm days surface as the top anomalies ---------------

#[test]
fn criterion_7_storm_profiles_are_the_top_two_anomalies() {
    let start = Instant::now();

    // 90 days: mild warm and mild cool days alternating, plus two storm
    // days with extreme rainfall and depressed ridership.
    let storm_a = 30usize; // 2018-07-01: 71.7 F, 4.0 in, 21.4 mph, 2794 trips
    let storm_b = 61usize; // 2018-08-01: 51.5 F, 2.5 in, 18.4 mph, 1208 trips
    let mut rows = Vec::with_capacity(90);
    for i in 0..90usize {
        let day = date(2018, 6, 1) + chrono::Days::new(i as u64);
        let x = i as f64;
        let (count, temp, precip, wind) = if i == storm_a {
            (2794u64, 71.7, 4.0, 21.4)
        } else if i == storm_b {
            (1208, 51.5, 2.5, 18.4)
        } else if i % 2 == 0 {
            (
                (4600.0 + 300.0 * (x * 0.9).sin()) as u64,
                74.0 + 3.0 * (x * 0.7).sin(),
                if i % 8 == 0 { 0.05 } else { 0.0 },
                6.0 + 2.0 * (x * 1.3).sin(),
            )
        } else {
            (
                (4000.0 + 250.0 * (x * 1.2).sin()) as u64,
                59.0 + 3.0 * (x * 0.8).sin(),
                if i % 9 == 0 { 0.1 } else { 0.0 },
                8.0 + 3.0 * (x * 1.1).sin(),
            )
        };
        rows.push(DailyRow {
            date: day,
            count,
            weather: vec![temp, precip, wind],
        });
    }
    let table = DailyTable::new(
        ["temperature", "precipitation", "wind_speed"]
            .map(str::to_string)
            .to_vec(),
        rows,
    )
    .unwrap();

    let matrix = FeatureMatrix::from_daily(&table, true, table.feature_names()).unwrap();
    let standardized = standardize(&matrix).unwrap();
    let result = hartigan_wong(&standardized, &KMeansConfig::new(3, 99)).unwrap();

    let (anomalies, warnings) = flag_anomalies(&table, &standardized, &result, 2).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(anomalies.len(), 2);
    assert_eq!(anomalies[0].rank, 1);
    assert_eq!(anomalies[1].rank, 2);
    let flagged: std::collections::BTreeSet<NaiveDate> =
        anomalies.iter().map(|a| a.date).collect();
    let expected: std::collections::BTreeSet<NaiveDate> =
        [date(2018, 7, 1), date(2018, 8, 1)].into_iter().collect();
    assert_eq!(flagged, expected, "storm days were not the top anomalies");

    finish(7, "anomaly flagging", start, Duration::from_secs(5));
}
