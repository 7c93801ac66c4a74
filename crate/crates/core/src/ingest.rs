//! CSV ingestion and cleaning: trip logs to daily counts, raw weather
//! tables to a joined, gap-free daily table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};

/// Canonical names of columns holding percentages; values must lie in [0, 100].
const PERCENT_COLUMNS: [&str; 2] = ["cloud_cover", "relative_humidity"];

/// How to read a trip-log CSV.
#[derive(Debug, Clone)]
pub struct TripSchema {
    /// Header of the trip start timestamp column (`YYYY-MM-DD HH:MM:SS`).
    pub start_time_column: String,
    /// Header of the trip duration column (non-negative integer seconds).
    pub duration_column: String,
    /// Trips shorter than this many seconds are discarded as false starts.
    pub min_duration_seconds: u64,
}

impl Default for TripSchema {
    fn default() -> Self {
        TripSchema {
            start_time_column: "Start date".to_string(),
            duration_column: "Duration".to_string(),
            min_duration_seconds: 60,
        }
    }
}

/// Count qualifying trips per calendar day.
///
/// A trip qualifies when its duration is at least the configured minimum;
/// shorter records are dock re-racks and other false starts. Days with no
/// qualifying trips do not appear in the map at all, so the caller can tell
/// "no service" apart from "zero rides". Input order never affects the
/// result.
pub fn parse_trips<R: Read>(reader: R, schema: &TripSchema) -> Result<BTreeMap<NaiveDate, u64>> {
    let mut csv = csv::ReaderBuilder::new().from_reader(reader);
    let headers = csv.headers()?.clone();

    let start_idx = find_column(&headers, &schema.start_time_column)?;
    let duration_idx = find_column(&headers, &schema.duration_column)?;

    let mut counts: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());

        let raw_start = record.get(start_idx).unwrap_or("").trim();
        let start = NaiveDateTime::parse_from_str(raw_start, "%Y-%m-%d %H:%M:%S").map_err(
            |_| Error::BadTimestamp {
                line,
                value: raw_start.to_string(),
            },
        )?;

        let raw_duration = record.get(duration_idx).unwrap_or("").trim();
        let duration: u64 = raw_duration.parse().map_err(|_| Error::MalformedRow {
            line,
            detail: format!(
                "duration {raw_duration:?} is not a non-negative integer number of seconds"
            ),
        })?;

        if duration >= schema.min_duration_seconds {
            *counts.entry(start.date()).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// Merge per-file daily counts (trip logs often arrive as monthly files).
pub fn merge_counts(parts: Vec<BTreeMap<NaiveDate, u64>>) -> BTreeMap<NaiveDate, u64> {
    let mut total: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for part in parts {
        for (date, n) in part {
            *total.entry(date).or_insert(0) += n;
        }
    }
    total
}

/// How to read a weather CSV: header spellings, the date column, and which
/// canonical columns hold numbers.
#[derive(Debug, Clone)]
pub struct WeatherSchema {
    /// Candidate headers for the observation date column (`YYYY-MM-DD`).
    pub date_columns: Vec<String>,
    /// Raw header spelling (case-insensitive) to canonical column name.
    pub column_map: BTreeMap<String, String>,
    /// Canonical columns parsed as numbers; everything else stays text.
    pub numeric_columns: BTreeSet<String>,
}

impl Default for WeatherSchema {
    fn default() -> Self {
        let column_map = [
            ("temp", "temperature"),
            ("maxt", "max_temperature"),
            ("mint", "min_temperature"),
            ("precip", "precipitation"),
            ("wspd", "wind_speed"),
            ("wgust", "wind_gust"),
            ("cloudcover", "cloud_cover"),
            ("humidity", "relative_humidity"),
            ("snowdepth", "snow_depth"),
            ("windchill", "wind_chill"),
            ("heatindex", "heat_index"),
        ]
        .into_iter()
        .map(|(from, to)| (from.to_string(), to.to_string()))
        .collect();

        let numeric_columns = [
            "temperature",
            "max_temperature",
            "min_temperature",
            "precipitation",
            "wind_speed",
            "wind_gust",
            "cloud_cover",
            "relative_humidity",
            "snow_depth",
            "wind_chill",
            "heat_index",
        ]
        .into_iter()
        .map(str::to_string)
        .collect();

        WeatherSchema {
            date_columns: vec!["date".to_string(), "datetime".to_string()],
            column_map,
            numeric_columns,
        }
    }
}

impl WeatherSchema {
    /// Canonical name for a raw header: mapped if known, otherwise
    /// lowercased with runs of non-alphanumeric characters as underscores.
    fn canonical(&self, raw: &str) -> String {
        let key = raw.trim().to_lowercase();
        if let Some(mapped) = self.column_map.get(&key) {
            return mapped.clone();
        }
        let mut name = String::with_capacity(key.len());
        let mut last_underscore = false;
        for c in key.chars() {
            if c.is_ascii_alphanumeric() {
                name.push(c);
                last_underscore = false;
            } else if !last_underscore && !name.is_empty() {
                name.push('_');
                last_underscore = true;
            }
        }
        while name.ends_with('_') {
            name.pop();
        }
        name
    }
}

/// One parsed weather column: canonical name plus per-row cells.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherColumn {
    pub name: String,
    pub values: ColumnValues,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl WeatherColumn {
    pub fn missing_fraction(&self, n_rows: usize) -> f64 {
        if n_rows == 0 {
            return 0.0;
        }
        let missing = match &self.values {
            ColumnValues::Numeric(v) => v.iter().filter(|c| c.is_none()).count(),
            ColumnValues::Text(v) => v.iter().filter(|c| c.is_none()).count(),
        };
        missing as f64 / n_rows as f64
    }
}

/// A weather table: one row per date, columns in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherTable {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<WeatherColumn>,
}

impl WeatherTable {
    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn column(&self, name: &str) -> Option<&WeatherColumn> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Parse a weather CSV into one row per date.
///
/// Empty cells become missing values, never zero. Numeric columns reject
/// non-numeric text, percent columns must stay within [0, 100], and a
/// repeated date is an error: upstream exports sometimes double a day, and
/// silently keeping either row would corrupt the join.
pub fn parse_weather<R: Read>(reader: R, schema: &WeatherSchema) -> Result<WeatherTable> {
    let mut csv = csv::ReaderBuilder::new().from_reader(reader);
    let headers = csv.headers()?.clone();

    let mut date_idx = None;
    for candidate in &schema.date_columns {
        if let Ok(idx) = find_column(&headers, candidate) {
            date_idx = Some(idx);
            break;
        }
    }
    let date_idx = date_idx.ok_or_else(|| Error::MissingColumn {
        name: schema.date_columns.join(" or "),
    })?;

    let mut names: Vec<(usize, String)> = Vec::new();
    for (idx, raw) in headers.iter().enumerate() {
        if idx == date_idx {
            continue;
        }
        let name = schema.canonical(raw);
        if name.is_empty() {
            continue;
        }
        if names.iter().any(|(_, n)| *n == name) {
            return Err(Error::invalid_input(
                "weather header",
                format!("two columns map to the canonical name {name:?}"),
            ));
        }
        names.push((idx, name));
    }

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut seen: BTreeSet<NaiveDate> = BTreeSet::new();
    let mut columns: Vec<WeatherColumn> = names
        .iter()
        .map(|(_, name)| {
            let values = if schema.numeric_columns.contains(name) {
                ColumnValues::Numeric(Vec::new())
            } else {
                ColumnValues::Text(Vec::new())
            };
            WeatherColumn {
                name: name.clone(),
                values,
            }
        })
        .collect();

    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());

        let raw_date = record.get(date_idx).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| Error::BadDate {
            line,
            value: raw_date.to_string(),
        })?;
        if !seen.insert(date) {
            return Err(Error::DuplicateDate { date });
        }
        dates.push(date);

        for (slot, (idx, name)) in names.iter().enumerate() {
            let raw = record.get(*idx).unwrap_or("").trim();
            match &mut columns[slot].values {
                ColumnValues::Numeric(cells) => {
                    if raw.is_empty() {
                        cells.push(None);
                    } else {
                        let value: f64 = raw.parse().map_err(|_| Error::NonNumericCell {
                            line,
                            column: name.clone(),
                            value: raw.to_string(),
                        })?;
                        if PERCENT_COLUMNS.contains(&name.as_str())
                            && !(0.0..=100.0).contains(&value)
                        {
                            return Err(Error::PercentOutOfRange {
                                line,
                                column: name.clone(),
                                value,
                            });
                        }
                        cells.push(Some(value));
                    }
                }
                ColumnValues::Text(cells) => {
                    if raw.is_empty() {
                        cells.push(None);
                    } else {
                        cells.push(Some(raw.to_string()));
                    }
                }
            }
        }
    }

    Ok(WeatherTable { dates, columns })
}

/// A column removed for sparsity, with the exact fraction that condemned it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub missing_fraction: f64,
}

/// Remove every column whose missing-cell fraction strictly exceeds
/// `threshold`. A column sitting exactly at the threshold is retained.
pub fn drop_sparse_columns(
    table: &WeatherTable,
    threshold: f64,
) -> (WeatherTable, Vec<DroppedColumn>) {
    let n = table.n_rows();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for column in &table.columns {
        let fraction = column.missing_fraction(n);
        if fraction > threshold {
            dropped.push(DroppedColumn {
                name: column.name.clone(),
                missing_fraction: fraction,
            });
        } else {
            kept.push(column.clone());
        }
    }
    (
        WeatherTable {
            dates: table.dates.clone(),
            columns: kept,
        },
        dropped,
    )
}

/// Remove columns by canonical name (nominal descriptors, station metadata,
/// anything that cannot feed a distance computation). Names not present
/// produce a warning instead of an error so one schema can serve multiple
/// exports.
pub fn exclude_columns(
    table: &WeatherTable,
    names: &[String],
) -> (WeatherTable, Vec<String>, Vec<String>) {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    let mut warnings = Vec::new();
    for column in &table.columns {
        if names.contains(&column.name) {
            removed.push(column.name.clone());
        } else {
            kept.push(column.clone());
        }
    }
    for name in names {
        if !removed.contains(name) {
            warnings.push(format!("column {name:?} not present; nothing to exclude"));
        }
    }
    (
        WeatherTable {
            dates: table.dates.clone(),
            columns: kept,
        },
        removed,
        warnings,
    )
}

/// One fully populated day: trip count plus every retained weather feature.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRow {
    pub date: NaiveDate,
    pub count: u64,
    /// Parallel to the owning table's `feature_names`.
    pub weather: Vec<f64>,
}

/// The joined daily table: sorted by date, no missing cells anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyTable {
    feature_names: Vec<String>,
    rows: Vec<DailyRow>,
}

impl DailyTable {
    pub fn new(feature_names: Vec<String>, mut rows: Vec<DailyRow>) -> Result<DailyTable> {
        rows.sort_by_key(|r| r.date);
        for pair in rows.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(Error::DuplicateDate { date: pair[0].date });
            }
        }
        let table = DailyTable {
            feature_names,
            rows,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if row.weather.len() != self.feature_names.len() {
                return Err(Error::DimensionMismatch {
                    left: row.weather.len(),
                    right: self.feature_names.len(),
                });
            }
            for (name, value) in self.feature_names.iter().zip(&row.weather) {
                if !value.is_finite() {
                    return Err(Error::invalid_input(
                        "daily table",
                        format!("{name} is not finite on {}", row.date),
                    ));
                }
                if name == "precipitation" && *value < 0.0 {
                    return Err(Error::invalid_input(
                        "daily table",
                        format!("negative precipitation {value} on {}", row.date),
                    ));
                }
                if PERCENT_COLUMNS.contains(&name.as_str()) && !(0.0..=100.0).contains(value) {
                    return Err(Error::invalid_input(
                        "daily table",
                        format!("{name} = {value} outside [0, 100] on {}", row.date),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[DailyRow] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.rows.iter().map(|r| r.date).collect()
    }

    pub fn counts(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.count).collect()
    }

    /// Weather column by canonical name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.feature_names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r.weather[idx]).collect())
    }

    /// Write as CSV (`date,count,<features...>`). Floats use the shortest
    /// representation that parses back to the same bits, so a write/read
    /// cycle is the identity.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string(), "count".to_string()];
        header.extend(self.feature_names.iter().cloned());
        out.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.date.to_string(), row.count.to_string()];
            record.extend(row.weather.iter().map(|v| v.to_string()));
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<DailyTable> {
        let mut csv = csv::ReaderBuilder::new().from_reader(reader);
        let headers = csv.headers()?.clone();
        let mut iter = headers.iter();
        if iter.next() != Some("date") || iter.next() != Some("count") {
            return Err(Error::invalid_input(
                "daily table csv",
                "header must start with date,count",
            ));
        }
        let feature_names: Vec<String> = iter.map(str::to_string).collect();

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
            let count: u64 = record
                .get(1)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::MalformedRow {
                    line,
                    detail: "count is not a non-negative integer".to_string(),
                })?;
            let mut weather = Vec::with_capacity(feature_names.len());
            for (i, name) in feature_names.iter().enumerate() {
                let raw = record.get(2 + i).unwrap_or("").trim();
                let value: f64 = raw.parse().map_err(|_| Error::NonNumericCell {
                    line,
                    column: name.clone(),
                    value: raw.to_string(),
                })?;
                weather.push(value);
            }
            rows.push(DailyRow {
                date,
                count,
                weather,
            });
        }
        DailyTable::new(feature_names, rows)
    }
}

/// Why rows fell out of the join; the totals are disjoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JoinReport {
    /// Weather days dropped: no trip count, or a missing weather cell.
    pub rows_dropped: usize,
    pub weather_days_without_trips: usize,
    pub weather_days_with_missing_values: usize,
    /// Trip days with no weather row at all (informational; these were never
    /// candidate rows).
    pub trip_days_without_weather: usize,
}

/// Inner-join daily counts with cleaned weather on date.
///
/// A weather day survives only when it has a trip count and every retained
/// weather cell; days with any gap are dropped, never imputed. All columns
/// must already be numeric: drop the nominal ones before joining.
pub fn join_daily(
    counts: &BTreeMap<NaiveDate, u64>,
    table: &WeatherTable,
) -> Result<(DailyTable, JoinReport)> {
    let mut numeric: Vec<(&str, &[Option<f64>])> = Vec::with_capacity(table.columns.len());
    for column in &table.columns {
        match &column.values {
            ColumnValues::Numeric(cells) => numeric.push((column.name.as_str(), cells)),
            ColumnValues::Text(_) => {
                return Err(Error::NominalColumnAtJoin {
                    name: column.name.clone(),
                })
            }
        }
    }

    let mut report = JoinReport {
        rows_dropped: 0,
        weather_days_without_trips: 0,
        weather_days_with_missing_values: 0,
        trip_days_without_weather: 0,
    };

    let mut rows = Vec::new();
    for (i, date) in table.dates.iter().enumerate() {
        let Some(&count) = counts.get(date) else {
            report.weather_days_without_trips += 1;
            report.rows_dropped += 1;
            continue;
        };
        let cells: Option<Vec<f64>> = numeric.iter().map(|(_, col)| col[i]).collect();
        match cells {
            Some(weather) => rows.push(DailyRow {
                date: *date,
                count,
                weather,
            }),
            None => {
                report.weather_days_with_missing_values += 1;
                report.rows_dropped += 1;
            }
        }
    }

    let weather_dates: BTreeSet<&NaiveDate> = table.dates.iter().collect();
    report.trip_days_without_weather = counts
        .keys()
        .filter(|d| !weather_dates.contains(d))
        .count();

    if rows.is_empty() {
        return Err(Error::EmptyJoin);
    }

    let feature_names = numeric.iter().map(|(n, _)| n.to_string()).collect();
    let table = DailyTable::new(feature_names, rows)?;
    Ok((table, report))
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| Error::MissingColumn {
            name: name.to_string(),
        })
}
