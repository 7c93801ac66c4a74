//! Clustering analysis of daily ride counts against weather.
//!
//! The pipeline runs in stages: raw trip and weather CSVs are cleaned
//! and joined into one row per day ([`ingest`]), correlated features are
//! pruned and the survivors standardized ([`preprocess`]), the rows are
//! clustered with Hartigan-Wong k-means ([`kmeans`]), candidate cluster
//! counts are scored by elbow, silhouette, and gap statistic
//! ([`validation`]), and the chosen clustering is summarized into
//! seasonal, workday, and anomaly reports ([`analysis`]).

pub mod analysis;
pub mod error;
pub mod ingest;
pub mod kmeans;
pub mod preprocess;
pub mod validation;

pub use error::{Error, Result};
