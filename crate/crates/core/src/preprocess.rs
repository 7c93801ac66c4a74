//! Feature preparation: correlation, redundancy pruning, z-scores.

use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::DailyTable;

/// Name of the target column carried as the first matrix feature.
pub const COUNT_COLUMN: &str = "count";

/// Pearson correlation over a set of named columns.
///
/// Symmetric, unit diagonal, every entry in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn by_name(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.feature_names.iter().position(|n| n == a)?;
        let j = self.feature_names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    /// CSV form: header row of feature names, then the square body.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(&self.feature_names)?;
        for row in &self.values {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-feature z-score parameters, in matrix column order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// A dense n x d matrix with named columns and one date per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    dates: Vec<NaiveDate>,
    rows: Vec<Vec<f64>>,
    standardization: Option<Standardization>,
}

impl FeatureMatrix {
    pub fn new(
        feature_names: Vec<String>,
        dates: Vec<NaiveDate>,
        rows: Vec<Vec<f64>>,
    ) -> Result<FeatureMatrix> {
        if dates.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                left: dates.len(),
                right: rows.len(),
            });
        }
        for row in &rows {
            if row.len() != feature_names.len() {
                return Err(Error::DimensionMismatch {
                    left: row.len(),
                    right: feature_names.len(),
                });
            }
        }
        Ok(FeatureMatrix {
            feature_names,
            dates,
            rows,
            standardization: None,
        })
    }

    /// Build the clustering matrix from the joined daily table: the trip
    /// count (unless excluded) followed by the requested weather features.
    pub fn from_daily(
        table: &DailyTable,
        include_count: bool,
        weather_features: &[String],
    ) -> Result<FeatureMatrix> {
        let mut indices = Vec::with_capacity(weather_features.len());
        for name in weather_features {
            let idx = table
                .feature_names()
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::MissingColumn { name: name.clone() })?;
            indices.push(idx);
        }

        let mut feature_names = Vec::new();
        if include_count {
            feature_names.push(COUNT_COLUMN.to_string());
        }
        feature_names.extend(weather_features.iter().cloned());

        let mut rows = Vec::with_capacity(table.n_rows());
        for row in table.rows() {
            let mut values = Vec::with_capacity(feature_names.len());
            if include_count {
                values.push(row.count as f64);
            }
            values.extend(indices.iter().map(|&i| row.weather[i]));
            rows.push(values);
        }

        FeatureMatrix::new(feature_names, table.dates(), rows)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardization.is_some()
    }

    /// The z-score parameters applied to this matrix, if any.
    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Write as CSV (`date,<features...>`), floats in shortest round-trip
    /// form. Standardization parameters travel separately.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.feature_names.iter().cloned());
        out.write_record(&header)?;
        for (date, row) in self.dates.iter().zip(&self.rows) {
            let mut record = vec![date.to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(
        reader: R,
        standardization: Option<Standardization>,
    ) -> Result<FeatureMatrix> {
        let mut csv = csv::ReaderBuilder::new().from_reader(reader);
        let headers = csv.headers()?.clone();
        let mut iter = headers.iter();
        if iter.next() != Some("date") {
            return Err(Error::invalid_input(
                "feature matrix csv",
                "header must start with date",
            ));
        }
        let feature_names: Vec<String> = iter.map(str::to_string).collect();

        let mut dates = Vec::new();
        let mut rows = Vec::new();
        for record in csv.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let raw_date = record.get(0).unwrap_or("").trim();
            let date =
                NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| Error::BadDate {
                    line,
                    value: raw_date.to_string(),
                })?;
            let mut row = Vec::with_capacity(feature_names.len());
            for (i, name) in feature_names.iter().enumerate() {
                let raw = record.get(1 + i).unwrap_or("").trim();
                let value: f64 = raw.parse().map_err(|_| Error::NonNumericCell {
                    line,
                    column: name.clone(),
                    value: raw.to_string(),
                })?;
                row.push(value);
            }
            dates.push(date);
            rows.push(row);
        }

        let mut matrix = FeatureMatrix::new(feature_names, dates, rows)?;
        if let Some(std) = standardization {
            if std.means.len() != matrix.n_features() || std.stds.len() != matrix.n_features() {
                return Err(Error::DimensionMismatch {
                    left: std.means.len(),
                    right: matrix.n_features(),
                });
            }
            matrix.standardization = Some(std);
        }
        Ok(matrix)
    }
}

/// Pearson correlation across all columns of the matrix.
///
/// Needs at least two rows; a constant column makes the coefficient
/// undefined and is reported by name rather than silently emitted as NaN.
pub fn pearson_correlation(matrix: &FeatureMatrix) -> Result<CorrelationMatrix> {
    let n = matrix.n_rows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let d = matrix.n_features();

    let mut means = vec![0.0; d];
    for row in matrix.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }

    // Sum of squared deviations per column; zero means constant.
    let mut ss = vec![0.0; d];
    for row in matrix.rows() {
        for j in 0..d {
            let dev = row[j] - means[j];
            ss[j] += dev * dev;
        }
    }
    for (j, &s) in ss.iter().enumerate() {
        if s == 0.0 {
            return Err(Error::ConstantColumn {
                name: matrix.feature_names()[j].clone(),
            });
        }
    }

    let mut values = vec![vec![0.0; d]; d];
    for i in 0..d {
        values[i][i] = 1.0;
        for j in (i + 1)..d {
            let mut cross = 0.0;
            for row in matrix.rows() {
                cross += (row[i] - means[i]) * (row[j] - means[j]);
            }
            // Clamp: rounding can push a perfect correlation past 1.
            let r = (cross / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }

    Ok(CorrelationMatrix {
        feature_names: matrix.feature_names().to_vec(),
        values,
    })
}

/// Outcome of redundancy pruning among the weather features.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelectionReport {
    /// Correlated groups found (size >= 2), members in column order.
    pub groups: Vec<Vec<String>>,
    /// Features removed, one kept per group.
    pub dropped: Vec<String>,
    /// Weather features surviving, in column order.
    pub retained: Vec<String>,
}

/// Drop redundant weather features and assemble the clustering matrix.
///
/// Features are grouped when connected by pairwise |r| strictly above
/// `redundancy_threshold`; from each group the one most correlated (in
/// magnitude) with the trip count survives. The count column itself is
/// never dropped, and a feature correlated with nothing is always kept.
/// `include_count` controls whether the count joins the matrix as a
/// clustering feature.
pub fn select_features(
    table: &DailyTable,
    corr: &CorrelationMatrix,
    redundancy_threshold: f64,
    include_count: bool,
) -> Result<(FeatureMatrix, SelectionReport)> {
    if !(0.0..=1.0).contains(&redundancy_threshold) {
        return Err(Error::invalid_input(
            "feature selection",
            format!("redundancy threshold {redundancy_threshold} outside [0, 1]"),
        ));
    }
    let mut expected = vec![COUNT_COLUMN.to_string()];
    expected.extend(table.feature_names().iter().cloned());
    if corr.feature_names != expected {
        return Err(Error::invalid_input(
            "feature selection",
            "correlation matrix must cover count plus every weather feature of the table",
        ));
    }

    let count_idx = 0usize;
    let weather_idx: Vec<usize> = (1..corr.feature_names.len()).collect();

    // Connected components under |r| > threshold, restricted to weather.
    let mut component: Vec<Option<usize>> = vec![None; weather_idx.len()];
    let mut n_components = 0;
    for start in 0..weather_idx.len() {
        if component[start].is_some() {
            continue;
        }
        let id = n_components;
        n_components += 1;
        let mut stack = vec![start];
        component[start] = Some(id);
        while let Some(a) = stack.pop() {
            for b in 0..weather_idx.len() {
                if component[b].is_none()
                    && corr.get(weather_idx[a], weather_idx[b]).abs() > redundancy_threshold
                {
                    component[b] = Some(id);
                    stack.push(b);
                }
            }
        }
    }

    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();
    for id in 0..n_components {
        let members: Vec<usize> = (0..weather_idx.len())
            .filter(|&i| component[i] == Some(id))
            .collect();
        if members.len() < 2 {
            continue;
        }
        let keep = members
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let ra = corr.get(weather_idx[a], count_idx).abs();
                let rb = corr.get(weather_idx[b], count_idx).abs();
                // Ties keep the earlier column.
                ra.partial_cmp(&rb)
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap();
        groups.push(
            members
                .iter()
                .map(|&i| corr.feature_names[weather_idx[i]].clone())
                .collect(),
        );
        for &i in &members {
            if i != keep {
                dropped.push(corr.feature_names[weather_idx[i]].clone());
            }
        }
    }

    let retained: Vec<String> = table
        .feature_names()
        .iter()
        .filter(|n| !dropped.contains(n))
        .cloned()
        .collect();

    let matrix = FeatureMatrix::from_daily(table, include_count, &retained)?;
    Ok((
        matrix,
        SelectionReport {
            groups,
            dropped,
            retained,
        },
    ))
}

/// Z-score every column using the sample standard deviation (n - 1).
///
/// The parameters actually applied are recorded on the result so centroids
/// can be mapped back to original units exactly.
pub fn standardize(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    standardize_subset(matrix, &vec![true; matrix.n_features()])
}

/// As [`standardize`], but only for the columns whose `include` entry is
/// true. Excluded columns pass through unchanged and are recorded with
/// identity parameters (mean 0, std 1), so destandardization and parameter
/// round-trips treat every column uniformly.
pub fn standardize_subset(matrix: &FeatureMatrix, include: &[bool]) -> Result<FeatureMatrix> {
    let n = matrix.n_rows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let d = matrix.n_features();
    if include.len() != d {
        return Err(Error::DimensionMismatch {
            left: include.len(),
            right: d,
        });
    }

    let mut means = vec![0.0; d];
    for row in matrix.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }

    let mut stds = vec![0.0; d];
    for row in matrix.rows() {
        for j in 0..d {
            let dev = row[j] - means[j];
            stds[j] += dev * dev;
        }
    }
    for (j, s) in stds.iter_mut().enumerate() {
        if !include[j] {
            continue;
        }
        if *s == 0.0 {
            return Err(Error::ZeroVariance {
                name: matrix.feature_names()[j].clone(),
            });
        }
        *s = (*s / (n as f64 - 1.0)).sqrt();
    }
    for j in 0..d {
        if !include[j] {
            means[j] = 0.0;
            stds[j] = 1.0;
        }
    }

    let rows = matrix
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, v)| if include[j] { (v - means[j]) / stds[j] } else { *v })
                .collect()
        })
        .collect();

    Ok(FeatureMatrix {
        feature_names: matrix.feature_names().to_vec(),
        dates: matrix.dates().to_vec(),
        rows,
        standardization: Some(Standardization { means, stds }),
    })
}

/// Map centroids from z-score space back to original units: x * std + mean.
pub fn destandardize_centroids(
    centroids: &[Vec<f64>],
    params: &Standardization,
) -> Result<Vec<Vec<f64>>> {
    if params.means.len() != params.stds.len() {
        return Err(Error::DimensionMismatch {
            left: params.means.len(),
            right: params.stds.len(),
        });
    }
    let d = params.means.len();
    let mut out = Vec::with_capacity(centroids.len());
    for centroid in centroids {
        if centroid.len() != d {
            return Err(Error::DimensionMismatch {
                left: centroid.len(),
                right: d,
            });
        }
        out.push(
            centroid
                .iter()
                .enumerate()
                .map(|(j, v)| v * params.stds[j] + params.means[j])
                .collect(),
        );
    }
    Ok(out)
}
