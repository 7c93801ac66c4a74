//! Declarative pipeline configuration: one TOML file plus flag overrides.
//!
//! Paths inside the file are resolved relative to the file's directory.
//! The resolved configuration (after overrides) is hashed into a digest
//! that every artifact embeds, so outputs can be traced to the exact
//! settings that produced them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bikecluster_core::analysis::{AnalysisOptions, CalendarConfig, SeasonDefinition};
use bikecluster_core::ingest::{TripSchema, WeatherSchema};
use bikecluster_core::kmeans::{InitMethod, KMeansConfig};
use bikecluster_core::validation::{GapRule, KRange, ValidationOptions};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    pub columns: Columns,
    pub cleaning: Cleaning,
    pub features: Features,
    pub kmeans: Kmeans,
    pub validation: Validation,
    pub analysis: Analysis,
    /// Month name (lowercase) to season name; empty uses the
    /// meteorological default.
    pub seasons: BTreeMap<String, String>,
    pub run: Run,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// One or more trip CSV exports; their daily counts are summed.
    pub trips: Vec<PathBuf>,
    pub weather: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Columns {
    pub trips: TripColumns,
    pub weather: WeatherColumns,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripColumns {
    pub start_time: String,
    pub duration: String,
}

impl Default for TripColumns {
    fn default() -> Self {
        let schema = TripSchema::default();
        TripColumns {
            start_time: schema.start_time_column,
            duration: schema.duration_column,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherColumns {
    /// Candidate headers for the date column.
    pub date: Vec<String>,
    /// Extra raw-header to canonical-name mappings, merged over the
    /// built-in vendor spellings; targets are parsed as numeric.
    pub map: BTreeMap<String, String>,
}

impl Default for WeatherColumns {
    fn default() -> Self {
        WeatherColumns {
            date: WeatherSchema::default().date_columns,
            map: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cleaning {
    /// Trips shorter than this are discarded as false starts.
    pub min_duration_seconds: u64,
    /// Columns missing more than this fraction of cells are dropped.
    pub max_missing_fraction: f64,
    /// Nominal columns removed before the join.
    pub exclude: Vec<String>,
}

impl Default for Cleaning {
    fn default() -> Self {
        Cleaning {
            min_duration_seconds: 60,
            max_missing_fraction: 0.5,
            exclude: ["conditions", "address", "location"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub include_count: bool,
    pub redundancy_threshold: f64,
    /// Clustering features to z-score; absent means all of them.
    pub standardize: Option<Vec<String>>,
}

impl Default for Features {
    fn default() -> Self {
        Features {
            include_count: true,
            redundancy_threshold: 0.9,
            standardize: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kmeans {
    pub k: usize,
    pub max_iterations: usize,
    pub n_configurations: usize,
    pub tolerance: f64,
    pub init: InitMethod,
}

impl Default for Kmeans {
    fn default() -> Self {
        Kmeans {
            k: 3,
            max_iterations: 10,
            n_configurations: 25,
            tolerance: 0.0,
            init: InitMethod::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Validation {
    /// Inclusive [min, max] cluster counts to examine.
    pub k_range: [usize; 2],
    pub bootstrap_count: usize,
    pub gap_rule: GapRule,
}

impl Default for Validation {
    fn default() -> Self {
        Validation {
            k_range: [1, 6],
            bootstrap_count: 50,
            gap_rule: GapRule::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analysis {
    pub top_anomalies: usize,
    /// Feature plotted against count in the scatter CSV.
    pub scatter_feature: String,
    /// CSV of holiday dates (header with a `date` column); optional.
    pub calendar_file: Option<PathBuf>,
    pub weekend: Vec<String>,
}

impl Default for Analysis {
    fn default() -> Self {
        Analysis {
            top_anomalies: 5,
            scatter_feature: "temperature".to_string(),
            calendar_file: None,
            weekend: vec!["saturday".to_string(), "sunday".to_string()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Run {
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for Run {
    fn default() -> Self {
        Run {
            out_dir: PathBuf::from("out"),
            seed: 42,
        }
    }
}

/// Flag overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub k_range: Option<(usize, usize)>,
    pub out_dir: Option<PathBuf>,
}

/// A parsed configuration bound to its file location and digest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// Directory the config file lives in; relative paths resolve here.
    pub base: PathBuf,
    /// Hex SHA-256 of the resolved configuration's canonical JSON form.
    pub digest: String,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;

        if let Some(seed) = overrides.seed {
            config.run.seed = seed;
        }
        if let Some(k) = overrides.k {
            config.kmeans.k = k;
        }
        if let Some((min, max)) = overrides.k_range {
            config.validation.k_range = [min, max];
        }
        if let Some(out) = &overrides.out_dir {
            config.run.out_dir = out.clone();
        }
        config.check()?;

        let canonical =
            serde_json::to_vec(&config).context("cannot serialize resolved config")?;
        let digest = hex(&Sha256::digest(&canonical));
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedConfig {
            config,
            base,
            digest,
        })
    }

    /// Resolve a configured path against the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.run.out_dir)
    }

    pub fn seed(&self) -> u64 {
        self.config.run.seed
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl PipelineConfig {
    fn check(&self) -> Result<()> {
        if self.inputs.trips.is_empty() {
            bail!("config needs at least one trips CSV under [inputs]");
        }
        if self.inputs.weather.as_os_str().is_empty() {
            bail!("config needs a weather CSV under [inputs]");
        }
        let [min, max] = self.validation.k_range;
        if min < 1 || min > max {
            bail!("k_range [{min}, {max}] is empty or starts below 1");
        }
        if self.kmeans.k < 1 {
            bail!("k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.features.redundancy_threshold) {
            bail!("redundancy_threshold must lie in [0, 1]");
        }
        let fraction = self.cleaning.max_missing_fraction;
        if fraction.is_nan() || fraction <= 0.0 || fraction > 1.0 {
            bail!("max_missing_fraction must lie in (0, 1]");
        }
        if !self.seasons.is_empty() {
            self.season_definition()?;
        }
        if let Some(set) = &self.features.standardize {
            let mut seen = std::collections::BTreeSet::new();
            for name in set {
                if name.is_empty() {
                    bail!("standardize list contains an empty feature name");
                }
                if !seen.insert(name) {
                    bail!("standardize list repeats feature \"{name}\"");
                }
            }
        }
        for day in &self.analysis.weekend {
            parse_weekday(day)?;
        }
        Ok(())
    }

    pub fn trip_schema(&self) -> TripSchema {
        TripSchema {
            start_time_column: self.columns.trips.start_time.clone(),
            duration_column: self.columns.trips.duration.clone(),
            min_duration_seconds: self.cleaning.min_duration_seconds,
        }
    }

    pub fn weather_schema(&self) -> WeatherSchema {
        let mut schema = WeatherSchema::default();
        if !self.columns.weather.date.is_empty() {
            schema.date_columns = self.columns.weather.date.clone();
        }
        for (from, to) in &self.columns.weather.map {
            schema.column_map.insert(from.clone(), to.clone());
            schema.numeric_columns.insert(to.clone());
        }
        schema
    }

    pub fn kmeans_config(&self, k: usize) -> KMeansConfig {
        KMeansConfig::new(k, self.run.seed)
            .with_max_iterations(self.kmeans.max_iterations)
            .with_n_configurations(self.kmeans.n_configurations)
            .with_tolerance(self.kmeans.tolerance)
            .with_init(self.kmeans.init)
    }

    pub fn validation_options(&self) -> Result<ValidationOptions> {
        let [min, max] = self.validation.k_range;
        Ok(ValidationOptions {
            k_range: KRange::new(min, max)?,
            bootstrap_count: self.validation.bootstrap_count,
            gap_rule: self.validation.gap_rule,
            kmeans: self.kmeans_config(self.kmeans.k),
        })
    }

    pub fn season_definition(&self) -> Result<SeasonDefinition> {
        if self.seasons.is_empty() {
            return Ok(SeasonDefinition::default());
        }
        const MONTHS: [&str; 12] = [
            "january", "february", "march", "april", "may", "june", "july", "august",
            "september", "october", "november", "december",
        ];
        let mut names = Vec::with_capacity(12);
        for month in MONTHS {
            match self.seasons.get(month) {
                Some(season) => names.push(season.clone()),
                None => bail!("[seasons] is missing {month}"),
            }
        }
        if let Some(unknown) = self.seasons.keys().find(|k| !MONTHS.contains(&k.as_str())) {
            bail!("[seasons] has an unknown month {unknown}");
        }
        Ok(SeasonDefinition::new(names)?)
    }

    pub fn analysis_options(&self, holidays: BTreeSet<NaiveDate>) -> Result<AnalysisOptions> {
        let weekend: Vec<Weekday> = self
            .analysis
            .weekend
            .iter()
            .map(|d| parse_weekday(d))
            .collect::<Result<_>>()?;
        Ok(AnalysisOptions {
            seasons: self.season_definition()?,
            calendar: CalendarConfig::new(&weekend, holidays),
            top_anomalies: self.analysis.top_anomalies,
        })
    }
}

fn parse_weekday(name: &str) -> Result<Weekday> {
    name.parse::<Weekday>()
        .map_err(|_| anyhow::anyhow!("{name} is not a weekday name"))
}

/// Holiday dates from a CSV with a header containing a `date` column.
pub fn load_holidays(path: &Path) -> Result<BTreeSet<NaiveDate>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot read calendar file {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let date_idx = headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case("date"))
        .with_context(|| format!("calendar file {} has no date column", path.display()))?;
    let mut holidays = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        let raw = record.get(date_idx).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .with_context(|| format!("bad calendar date {raw:?} in {}", path.display()))?;
        if !holidays.insert(date) {
            bail!("duplicate holiday {date} in {}", path.display());
        }
    }
    Ok(holidays)
}

/// Parse an inclusive `A..B` cluster-count range.
pub fn parse_k_range(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once("..")
        .with_context(|| format!("expected A..B, got {text:?}"))?;
    let min: usize = a.trim().parse().with_context(|| format!("bad range start {a:?}"))?;
    let max: usize = b
        .trim()
        .trim_start_matches('=')
        .parse()
        .with_context(|| format!("bad range end {b:?}"))?;
    if min < 1 || min > max {
        bail!("range {text} is empty or starts below 1");
    }
    Ok((min, max))
}
