//! Pipeline stages. Each one reads the artifacts of the stage before it
//! from the output directory and writes its own, so running the
//! subcommands in sequence is exactly equivalent to one full `run`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};

use bikecluster_core::analysis::{
    analyze, write_scatter_csv, write_season_csv, write_workday_csv,
};
use bikecluster_core::ingest::{
    drop_sparse_columns, exclude_columns, join_daily, merge_counts, parse_trips, parse_weather,
    DailyTable,
};
use bikecluster_core::kmeans::{hartigan_wong, ClusteringResult};
use bikecluster_core::preprocess::{
    destandardize_centroids, pearson_correlation, select_features, standardize,
    standardize_subset, FeatureMatrix,
    Standardization,
};
use bikecluster_core::validation::validate;

use crate::artifacts::{
    self, AnalysisArtifact, AssignmentEntry, CleaningArtifact, ClusteringArtifact, MeanStd,
    SelectionArtifact, StandardizationArtifact, ValidationArtifact,
};
use crate::config::{load_holidays, LoadedConfig};

/// Ingestion and feature preparation: raw CSVs to a cleaned daily table,
/// correlation matrix, feature selection, and standardized matrix.
pub fn run_ingest(loaded: &LoadedConfig) -> Result<()> {
    let config = &loaded.config;
    let out = loaded.out_dir();
    std::fs::create_dir_all(&out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;

    let trip_schema = config.trip_schema();
    let mut parts = Vec::new();
    for path in &config.inputs.trips {
        let full = loaded.resolve(path);
        let file = File::open(&full)
            .with_context(|| format!("cannot open trips CSV {}", full.display()))?;
        parts.push(
            parse_trips(file, &trip_schema)
                .with_context(|| format!("in trips CSV {}", full.display()))?,
        );
    }
    let counts = merge_counts(parts);

    let weather_path = loaded.resolve(&config.inputs.weather);
    let weather_file = File::open(&weather_path)
        .with_context(|| format!("cannot open weather CSV {}", weather_path.display()))?;
    let weather = parse_weather(weather_file, &config.weather_schema())
        .with_context(|| format!("in weather CSV {}", weather_path.display()))?;
    let weather_days = weather.n_rows();

    let (weather, dropped_columns) =
        drop_sparse_columns(&weather, config.cleaning.max_missing_fraction);
    let (weather, excluded_columns, warnings) =
        exclude_columns(&weather, &config.cleaning.exclude);
    let (table, join) = join_daily(&counts, &weather)?;

    artifacts::write_json(
        &out,
        artifacts::CLEANING_REPORT,
        &CleaningArtifact {
            seed: loaded.seed(),
            config_digest: loaded.digest.clone(),
            trip_days: counts.len(),
            weather_days,
            dropped_columns,
            excluded_columns,
            rows_dropped_in_join: join.rows_dropped,
            join,
            n_rows: table.rows().len(),
            feature_names: table.feature_names().to_vec(),
            warnings,
        },
    )?;
    write_csv_artifact(&out, artifacts::DAILY_TABLE, |w| table.write_csv(w))?;

    let full_matrix = FeatureMatrix::from_daily(&table, true, table.feature_names())?;
    let correlation = pearson_correlation(&full_matrix)?;
    write_csv_artifact(&out, artifacts::CORRELATION, |w| correlation.write_csv(w))?;

    let (selected, selection) = select_features(
        &table,
        &correlation,
        config.features.redundancy_threshold,
        config.features.include_count,
    )?;
    artifacts::write_json(
        &out,
        artifacts::FEATURE_SELECTION,
        &SelectionArtifact::new(
            loaded.seed(),
            &loaded.digest,
            config.features.redundancy_threshold,
            config.features.include_count,
            selection,
        ),
    )?;

    let standardized = match &config.features.standardize {
        None => standardize(&selected)?,
        Some(subset) => {
            let names = selected.feature_names();
            for name in subset {
                if !names.contains(name) {
                    bail!(
                        "standardize list names \"{name}\", which is not a clustering \
                         feature (available: {})",
                        names.join(", ")
                    );
                }
            }
            let mask: Vec<bool> = names.iter().map(|n| subset.contains(n)).collect();
            standardize_subset(&selected, &mask)?
        }
    };
    let params = standardized
        .standardization()
        .expect("standardize always records parameters");
    let features: BTreeMap<String, MeanStd> = standardized
        .feature_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            (
                name.clone(),
                MeanStd {
                    mean: params.means[j],
                    std: params.stds[j],
                },
            )
        })
        .collect();
    artifacts::write_json(
        &out,
        artifacts::STANDARDIZATION,
        &StandardizationArtifact {
            seed: loaded.seed(),
            config_digest: loaded.digest.clone(),
            features,
        },
    )?;
    write_csv_artifact(&out, artifacts::FEATURE_MATRIX, |w| standardized.write_csv(w))?;

    artifacts::write_manifest(&out, loaded.seed(), &loaded.digest)
}

/// Cluster-count validation over the configured k range.
pub fn run_validate(loaded: &LoadedConfig) -> Result<()> {
    let out = loaded.out_dir();
    let matrix = load_matrix(&out)?;
    let options = loaded.config.validation_options()?;
    let report = validate(&matrix, &options)?;

    write_csv_artifact(&out, artifacts::VALIDATION_CURVES, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["k", "wss", "silhouette", "gap", "gap_se"])?;
        for (i, k) in report.k_values.iter().enumerate() {
            csv.write_record([
                k.to_string(),
                report.wss_curve[i].to_string(),
                report.silhouette_curve[i].map_or(String::new(), |s| s.to_string()),
                report.gap_curve[i].to_string(),
                report.gap_se[i].to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    artifacts::write_json(
        &out,
        artifacts::VALIDATION_REPORT,
        &ValidationArtifact::new(&loaded.digest, report),
    )?;

    artifacts::write_manifest(&out, loaded.seed(), &loaded.digest)
}

/// Cluster the standardized matrix at the configured k.
pub fn run_cluster(loaded: &LoadedConfig) -> Result<()> {
    let out = loaded.out_dir();
    let matrix = load_matrix(&out)?;
    let k = loaded.config.kmeans.k;
    let result = hartigan_wong(&matrix, &loaded.config.kmeans_config(k))?;

    let params = matrix
        .standardization()
        .expect("pipeline matrices carry standardization parameters");
    let centroids_original = destandardize_centroids(&result.centroids, params)?;
    let assignments = matrix
        .dates()
        .iter()
        .zip(&result.assignments)
        .map(|(&date, &cluster)| AssignmentEntry { date, cluster })
        .collect();

    artifacts::write_json(
        &out,
        artifacts::CLUSTERING,
        &ClusteringArtifact {
            seed: loaded.seed(),
            config_digest: loaded.digest.clone(),
            k,
            total_wss: result.total_wss,
            per_cluster_wss: result.per_cluster_wss,
            iterations_used: result.iterations_used,
            converged: result.converged,
            seed_used: result.seed_used,
            restarts_discarded_for_empty_clusters: result.restarts_discarded_for_empty_clusters,
            feature_names: matrix.feature_names().to_vec(),
            centroids_standardized: result.centroids,
            centroids_original_units: centroids_original,
            assignments,
        },
    )?;

    artifacts::write_manifest(&out, loaded.seed(), &loaded.digest)
}

/// Post-clustering analysis and plot data.
pub fn run_report(loaded: &LoadedConfig) -> Result<()> {
    let config = &loaded.config;
    let out = loaded.out_dir();

    let table = DailyTable::read_csv(artifacts::open_artifact(
        &out,
        artifacts::DAILY_TABLE,
        "ingest",
    )?)?;
    let matrix = load_matrix(&out)?;
    let clustering: ClusteringArtifact =
        artifacts::read_json(&out, artifacts::CLUSTERING, "cluster")?;
    let result = reassemble(&matrix, &clustering)?;

    let holidays = match &config.analysis.calendar_file {
        Some(path) => load_holidays(&loaded.resolve(path))?,
        None => Default::default(),
    };
    let options = config.analysis_options(holidays)?;
    let report = analyze(&table, &matrix, &result, &options)?;

    artifacts::write_json(
        &out,
        artifacts::ANALYSIS_REPORT,
        &AnalysisArtifact {
            seed: loaded.seed(),
            config_digest: loaded.digest.clone(),
            clusters: report.clusters,
            seasons: report.seasons,
            workday: report.workday,
            anomalies: report.anomalies,
            warnings: report.warnings,
        },
    )?;

    write_csv_artifact(&out, artifacts::PLOT_SCATTER, |w| {
        write_scatter_csv(w, &table, &result.assignments, &config.analysis.scatter_feature)
    })?;
    write_csv_artifact(&out, artifacts::PLOT_WORKDAY, |w| {
        write_workday_csv(w, &table, &result.assignments, &options.calendar)
    })?;
    write_csv_artifact(&out, artifacts::PLOT_SEASONS, |w| {
        write_season_csv(w, &table, &result.assignments, &options.seasons)
    })?;

    artifacts::write_manifest(&out, loaded.seed(), &loaded.digest)
}

/// All four stages in order.
pub fn run_pipeline(loaded: &LoadedConfig) -> Result<()> {
    run_ingest(loaded).context("ingest stage failed")?;
    run_validate(loaded).context("validate stage failed")?;
    run_cluster(loaded).context("cluster stage failed")?;
    run_report(loaded).context("report stage failed")?;
    Ok(())
}

/// The standardized matrix plus its parameters, from stage artifacts.
fn load_matrix(out: &Path) -> Result<FeatureMatrix> {
    let standardization: StandardizationArtifact =
        artifacts::read_json(out, artifacts::STANDARDIZATION, "ingest")?;
    let bytes = std::fs::read(out.join(artifacts::FEATURE_MATRIX)).with_context(|| {
        format!(
            "cannot read {}: run the `ingest` stage first",
            out.join(artifacts::FEATURE_MATRIX).display()
        )
    })?;

    // First pass fixes the column order, second attaches the parameters.
    let bare = FeatureMatrix::read_csv(bytes.as_slice(), None)?;
    let mut means = Vec::with_capacity(bare.n_features());
    let mut stds = Vec::with_capacity(bare.n_features());
    for name in bare.feature_names() {
        let entry = standardization
            .features
            .get(name)
            .with_context(|| format!("standardization parameters missing feature {name}"))?;
        means.push(entry.mean);
        stds.push(entry.std);
    }
    Ok(FeatureMatrix::read_csv(
        bytes.as_slice(),
        Some(Standardization { means, stds }),
    )?)
}

/// Rebuild an in-memory clustering result from its artifact, checking it
/// still matches the matrix on disk.
fn reassemble(matrix: &FeatureMatrix, artifact: &ClusteringArtifact) -> Result<ClusteringResult> {
    if artifact.assignments.len() != matrix.n_rows() {
        bail!(
            "clustering artifact covers {} rows but the feature matrix has {}",
            artifact.assignments.len(),
            matrix.n_rows()
        );
    }
    let mut assignments = Vec::with_capacity(matrix.n_rows());
    for (entry, date) in artifact.assignments.iter().zip(matrix.dates()) {
        if entry.date != *date {
            bail!(
                "clustering artifact lists {} where the feature matrix has {}; regenerate with `cluster`",
                entry.date,
                date
            );
        }
        assignments.push(entry.cluster);
    }
    Ok(ClusteringResult {
        assignments,
        centroids: artifact.centroids_standardized.clone(),
        per_cluster_wss: artifact.per_cluster_wss.clone(),
        total_wss: artifact.total_wss,
        iterations_used: artifact.iterations_used,
        converged: artifact.converged,
        seed_used: artifact.seed_used,
        restarts_discarded_for_empty_clusters: artifact.restarts_discarded_for_empty_clusters,
    })
}

fn write_csv_artifact<F>(out: &Path, name: &str, write: F) -> Result<()>
where
    F: FnOnce(&mut File) -> bikecluster_core::Result<()>,
{
    let path = out.join(name);
    let mut file =
        File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    write(&mut file).with_context(|| format!("while writing {}", path.display()))?;
    Ok(())
}
