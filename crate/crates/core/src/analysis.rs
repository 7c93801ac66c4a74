//! Post-clustering reporting: per-cluster descriptive statistics,
//! seasonal ride averages, the working-day split, and anomaly flags.

use std::collections::BTreeSet;
use std::io::Write;

use chrono::{Datelike, NaiveDate, Weekday};

use crate::error::{Error, Result};
use crate::ingest::DailyTable;
use crate::kmeans::{euclidean_distance, ClusteringResult};
use crate::preprocess::FeatureMatrix;

/// Descriptive statistics for one feature inside one cluster, in the
/// feature's original units.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureStats {
    pub feature: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Mean of the two middle values when the cluster has even size.
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    pub features: Vec<FeatureStats>,
}

/// Month-to-season mapping. The default is meteorological: Dec-Feb
/// winter, Mar-May spring, Jun-Aug summer, Sep-Nov autumn.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeasonDefinition {
    /// Season name for each month, January first.
    months: Vec<String>,
}

impl Default for SeasonDefinition {
    fn default() -> Self {
        let names = [
            "winter", "winter", "spring", "spring", "spring", "summer", "summer", "summer",
            "autumn", "autumn", "autumn", "winter",
        ];
        SeasonDefinition {
            months: names.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SeasonDefinition {
    /// Build from twelve season names, January first.
    pub fn new(months: Vec<String>) -> Result<SeasonDefinition> {
        if months.len() != 12 {
            return Err(Error::invalid_input(
                "season definition",
                format!("need 12 month entries, got {}", months.len()),
            ));
        }
        if months.iter().any(|m| m.is_empty()) {
            return Err(Error::invalid_input(
                "season definition",
                "empty season name",
            ));
        }
        Ok(SeasonDefinition { months })
    }

    pub fn season_of(&self, date: NaiveDate) -> &str {
        &self.months[date.month0() as usize]
    }

    /// Distinct season names in order of first appearance from January.
    pub fn season_order(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for name in &self.months {
            if !seen.iter().any(|s| s == &name.as_str()) {
                seen.push(name.as_str());
            }
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeasonStat {
    pub season: String,
    pub observations: usize,
    pub total_trips: u64,
    pub average_per_day: f64,
    /// average_per_day rounded half away from zero for display.
    pub average_rounded: i64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeasonalReport {
    pub seasons: Vec<SeasonStat>,
    pub warnings: Vec<String>,
}

/// Which days count as non-working: weekend weekdays plus an explicit
/// holiday list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalendarConfig {
    /// Indexed by days from Monday; true marks a weekend day.
    weekend: [bool; 7],
    holidays: BTreeSet<NaiveDate>,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        CalendarConfig::new(&[Weekday::Sat, Weekday::Sun], BTreeSet::new())
    }
}

impl CalendarConfig {
    pub fn new(weekend: &[Weekday], holidays: BTreeSet<NaiveDate>) -> CalendarConfig {
        let mut flags = [false; 7];
        for day in weekend {
            flags[day.num_days_from_monday() as usize] = true;
        }
        CalendarConfig {
            weekend: flags,
            holidays,
        }
    }

    pub fn is_working(&self, date: NaiveDate) -> bool {
        !self.weekend[date.weekday().num_days_from_monday() as usize]
            && !self.holidays.contains(&date)
    }

    pub fn holidays(&self) -> &BTreeSet<NaiveDate> {
        &self.holidays
    }
}

/// Ride-count distribution of one day group within a cluster.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroupStats {
    pub size: usize,
    pub mean_count: Option<f64>,
    pub median_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusterWorkday {
    pub cluster: usize,
    pub working: GroupStats,
    pub non_working: GroupStats,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnomalyFlag {
    pub date: NaiveDate,
    pub cluster_index: usize,
    /// Euclidean distance to the own-cluster centroid in the space the
    /// clustering ran in (standardized units for the pipeline).
    pub distance_to_centroid: f64,
    /// 1 marks the largest distance.
    pub rank: usize,
    pub note: String,
}

/// The full post-clustering report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnalysisReport {
    pub clusters: Vec<ClusterSummary>,
    pub seasons: SeasonalReport,
    pub workday: Vec<ClusterWorkday>,
    pub anomalies: Vec<AnomalyFlag>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub seasons: SeasonDefinition,
    pub calendar: CalendarConfig,
    pub top_anomalies: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            seasons: SeasonDefinition::default(),
            calendar: CalendarConfig::default(),
            top_anomalies: 5,
        }
    }
}

fn median_of_sorted(values: &[f64]) -> f64 {
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn check_assignments(assignments: &[usize], n: usize) -> Result<usize> {
    if assignments.len() != n {
        return Err(Error::DimensionMismatch {
            left: assignments.len(),
            right: n,
        });
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster { index });
    }
    Ok(k)
}

/// Per-cluster min/max/mean/median for every matrix feature, reported
/// in original units (standardization is undone when present).
pub fn cluster_summary(
    matrix: &FeatureMatrix,
    assignments: &[usize],
) -> Result<Vec<ClusterSummary>> {
    let k = check_assignments(assignments, matrix.n_rows())?;
    let rows = original_rows(matrix);
    let names = matrix.feature_names();

    let mut summaries = Vec::with_capacity(k);
    for cluster in 0..k {
        let member_rows: Vec<&Vec<f64>> = rows
            .iter()
            .zip(assignments)
            .filter(|(_, &a)| a == cluster)
            .map(|(r, _)| r)
            .collect();
        let mut features = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let mut values: Vec<f64> = member_rows.iter().map(|r| r[j]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            features.push(FeatureStats {
                feature: name.clone(),
                min: values[0],
                max: values[values.len() - 1],
                mean: values.iter().sum::<f64>() / values.len() as f64,
                median: median_of_sorted(&values),
            });
        }
        summaries.push(ClusterSummary {
            cluster,
            size: member_rows.len(),
            features,
        });
    }
    Ok(summaries)
}

/// Rows mapped back to original units when the matrix is standardized.
fn original_rows(matrix: &FeatureMatrix) -> Vec<Vec<f64>> {
    match matrix.standardization() {
        Some(params) => matrix
            .rows()
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| v * params.stds[j] + params.means[j])
                    .collect()
            })
            .collect(),
        None => matrix.rows().to_vec(),
    }
}

/// Total trips, observation count, and average rides per day for each
/// season, in month order of first appearance. Seasons with no
/// observations are omitted with a warning.
pub fn seasonal_averages(table: &DailyTable, seasons: &SeasonDefinition) -> Result<SeasonalReport> {
    if table.rows().is_empty() {
        return Err(Error::invalid_input("seasonal averages", "no records"));
    }
    let order = seasons.season_order();
    let mut stats = Vec::new();
    let mut warnings = Vec::new();
    for name in order {
        let mut observations = 0usize;
        let mut total: u64 = 0;
        for row in table.rows() {
            if seasons.season_of(row.date) == name {
                observations += 1;
                total += row.count;
            }
        }
        if observations == 0 {
            warnings.push(format!("season {name} has no observations; omitted"));
            continue;
        }
        let average = total as f64 / observations as f64;
        stats.push(SeasonStat {
            season: name.to_string(),
            observations,
            total_trips: total,
            average_per_day: average,
            average_rounded: average.round() as i64,
        });
    }
    Ok(SeasonalReport {
        seasons: stats,
        warnings,
    })
}

/// Ride-count statistics per cluster, split into working and
/// non-working days by the calendar.
pub fn workday_split(
    table: &DailyTable,
    assignments: &[usize],
    calendar: &CalendarConfig,
) -> Result<Vec<ClusterWorkday>> {
    let k = check_assignments(assignments, table.rows().len())?;
    let mut split = Vec::with_capacity(k);
    for cluster in 0..k {
        let mut working = Vec::new();
        let mut non_working = Vec::new();
        for (row, &a) in table.rows().iter().zip(assignments) {
            if a != cluster {
                continue;
            }
            if calendar.is_working(row.date) {
                working.push(row.count as f64);
            } else {
                non_working.push(row.count as f64);
            }
        }
        split.push(ClusterWorkday {
            cluster,
            working: group_stats(working),
            non_working: group_stats(non_working),
        });
    }
    Ok(split)
}

fn group_stats(mut counts: Vec<f64>) -> GroupStats {
    if counts.is_empty() {
        return GroupStats {
            size: 0,
            mean_count: None,
            median_count: None,
        };
    }
    counts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    GroupStats {
        size: counts.len(),
        mean_count: Some(counts.iter().sum::<f64>() / counts.len() as f64),
        median_count: Some(median_of_sorted(&counts)),
    }
}

/// The `top_n` records farthest from their own cluster centroid,
/// descending; ties go to the earlier date. Notes carry the day's
/// values in original units.
pub fn flag_anomalies(
    table: &DailyTable,
    matrix: &FeatureMatrix,
    result: &ClusteringResult,
    top_n: usize,
) -> Result<(Vec<AnomalyFlag>, Vec<String>)> {
    if top_n < 1 {
        return Err(Error::invalid_input(
            "anomaly flagging",
            "top_n must be at least 1",
        ));
    }
    check_alignment(table, matrix)?;
    let n = matrix.n_rows();
    if result.assignments.len() != n {
        return Err(Error::DimensionMismatch {
            left: result.assignments.len(),
            right: n,
        });
    }

    let mut warnings = Vec::new();
    let keep = if top_n > n {
        warnings.push(format!("top_n {top_n} exceeds record count {n}; returning all"));
        n
    } else {
        top_n
    };

    let originals = original_rows(matrix);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, row) in matrix.rows().iter().enumerate() {
        let cluster = result.assignments[i];
        let distance = euclidean_distance(row, &result.centroids[cluster])?;
        scored.push((distance, i));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| matrix.dates()[a.1].cmp(&matrix.dates()[b.1]))
    });

    let names = matrix.feature_names();
    let flags = scored
        .iter()
        .take(keep)
        .enumerate()
        .map(|(rank, &(distance, i))| {
            let row = &table.rows()[i];
            let mut parts = vec![format!("count {}", row.count)];
            for (j, name) in names.iter().enumerate() {
                if name != "count" {
                    parts.push(format!("{} {}", name, originals[i][j]));
                }
            }
            AnomalyFlag {
                date: row.date,
                cluster_index: result.assignments[i],
                distance_to_centroid: distance,
                rank: rank + 1,
                note: parts.join(", "),
            }
        })
        .collect();
    Ok((flags, warnings))
}

fn check_alignment(table: &DailyTable, matrix: &FeatureMatrix) -> Result<()> {
    if table.rows().len() != matrix.n_rows() {
        return Err(Error::DimensionMismatch {
            left: table.rows().len(),
            right: matrix.n_rows(),
        });
    }
    for (row, date) in table.rows().iter().zip(matrix.dates()) {
        if row.date != *date {
            return Err(Error::invalid_input(
                "analysis",
                format!("row dates diverge at {}", row.date),
            ));
        }
    }
    Ok(())
}

/// Run every analysis over one clustering and collect the results.
pub fn analyze(
    table: &DailyTable,
    matrix: &FeatureMatrix,
    result: &ClusteringResult,
    options: &AnalysisOptions,
) -> Result<AnalysisReport> {
    check_alignment(table, matrix)?;
    let clusters = cluster_summary(matrix, &result.assignments)?;
    let seasons = seasonal_averages(table, &options.seasons)?;
    let workday = workday_split(table, &result.assignments, &options.calendar)?;
    let (anomalies, warnings) = flag_anomalies(table, matrix, result, options.top_anomalies)?;
    Ok(AnalysisReport {
        clusters,
        seasons,
        workday,
        anomalies,
        warnings,
    })
}

/// Scatter plot data: date, count, one chosen feature, cluster.
pub fn write_scatter_csv<W: Write>(
    writer: W,
    table: &DailyTable,
    assignments: &[usize],
    feature: &str,
) -> Result<()> {
    check_assignments(assignments, table.rows().len())?;
    let j = table
        .feature_names()
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| Error::MissingColumn {
            name: feature.to_string(),
        })?;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["date", "count", feature, "cluster"])?;
    for (row, &a) in table.rows().iter().zip(assignments) {
        out.write_record([
            row.date.to_string(),
            row.count.to_string(),
            row.weather[j].to_string(),
            a.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Working-day plot data: cluster, day type, count, one row per record.
pub fn write_workday_csv<W: Write>(
    writer: W,
    table: &DailyTable,
    assignments: &[usize],
    calendar: &CalendarConfig,
) -> Result<()> {
    check_assignments(assignments, table.rows().len())?;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["cluster", "daytype", "count"])?;
    for (row, &a) in table.rows().iter().zip(assignments) {
        let daytype = if calendar.is_working(row.date) {
            "working"
        } else {
            "non_working"
        };
        out.write_record([a.to_string(), daytype.to_string(), row.count.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Seasonal plot data: cluster, season, count, one row per record.
pub fn write_season_csv<W: Write>(
    writer: W,
    table: &DailyTable,
    assignments: &[usize],
    seasons: &SeasonDefinition,
) -> Result<()> {
    check_assignments(assignments, table.rows().len())?;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["cluster", "season", "count"])?;
    for (row, &a) in table.rows().iter().zip(assignments) {
        out.write_record([
            a.to_string(),
            seasons.season_of(row.date).to_string(),
            row.count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
