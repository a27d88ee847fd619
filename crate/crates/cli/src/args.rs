use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cropfusion::fusion::{FusionMethod, GateType, MergeFunction};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "cropfusion",
    version,
    about = "Multi-view fusion experiments on multi-view time series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-view dataset.
    Synth(SynthArgs),
    /// Train one fusion method for several runs.
    Train(TrainArgs),
    /// Train every fusion method plus single-view baselines.
    Compare(CompareArgs),
    /// Aggregate a results file into markdown and CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 12)]
    pub timesteps: usize,
    /// Comma-separated `name:channels:informativeness[:static]` entries.
    /// Defaults to optical, radar, weather, ndvi and a static dem.
    #[arg(long)]
    pub views: Option<String>,
    /// Noise standard deviation of every view.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Per-view noise overrides as `name=scale` pairs.
    #[arg(long, value_delimiter = ',')]
    pub view_noise: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub positive_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
}

/// Training flags shared by `train` and `compare`.
#[derive(Debug, Args, Serialize)]
pub struct CommonTrainArgs {
    /// Dataset directory or manifest path.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Views to use, comma separated. Defaults to every dataset view.
    #[arg(long, value_delimiter = ',')]
    pub views: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Base seed; run r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.01)]
    pub min_delta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.3)]
    pub aux_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden_units: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long)]
    pub no_batchnorm: bool,
    /// Use raw inputs instead of standardising with train-split statistics.
    #[arg(long)]
    pub no_standardize: bool,
    /// Train runs one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonTrainArgs,
    #[arg(long)]
    pub method: FusionMethod,
    /// Merge function; only valid with feature-s (default average).
    #[arg(long)]
    pub merge: Option<MergeFunction>,
    /// Gate type; only valid with feature-g (default gatedf-a).
    #[arg(long)]
    pub gate: Option<GateType>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonTrainArgs,
    /// Merge function of the feature-s section (default average).
    #[arg(long)]
    pub merge: Option<MergeFunction>,
    /// Gate type of the feature-g section (default gatedf-a).
    #[arg(long)]
    pub gate: Option<GateType>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// JSON-lines results file written by `train` or `compare`.
    #[arg(long)]
    pub results: PathBuf,
    /// Output directory for report.md and report.csv.
    #[arg(long)]
    pub out: PathBuf,
}
