//! Command-line pipeline for clustering daily ride counts with weather.

mod artifacts;
mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_k_range, LoadedConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "bikecluster",
    version,
    about = "Cluster daily bike-share ride counts against weather",
    long_about = "Runs a staged pipeline: ingest raw trip and weather CSVs into a \
cleaned daily table and standardized feature matrix, score candidate cluster \
counts, cluster with seeded multi-start k-means, and produce summary reports \
and plot data. Stages exchange artifact files in the output directory, so \
they can run separately or all at once with `run`."
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "pipeline.toml")]
    config: PathBuf,

    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cluster count for `cluster`, overriding the config file.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Inclusive cluster-count range for `validate`, written A..B.
    #[arg(long = "k-range", global = true, value_name = "A..B")]
    k_range: Option<String>,

    /// Output directory, overriding the config file.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and join the raw CSVs; prepare the standardized features.
    Ingest,
    /// Score candidate cluster counts (elbow, silhouette, gap).
    Validate,
    /// Cluster the standardized features at the configured k.
    Cluster,
    /// Summarize a clustering: statistics, seasons, workdays, anomalies.
    Report,
    /// All stages in order.
    Run,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        k: cli.k,
        k_range: cli.k_range.as_deref().map(parse_k_range).transpose()?,
        out_dir: cli.out,
    };
    let loaded = LoadedConfig::load(&cli.config, &overrides)?;
    match cli.command {
        Command::Ingest => stages::run_ingest(&loaded).context("ingest stage failed"),
        Command::Validate => stages::run_validate(&loaded).context("validate stage failed"),
        Command::Cluster => stages::run_cluster(&loaded).context("cluster stage failed"),
        Command::Report => stages::run_report(&loaded).context("report stage failed"),
        Command::Run => stages::run_pipeline(&loaded),
    }
}

use anyhow::Context;
