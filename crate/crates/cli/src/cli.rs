//! Command-line surface. Flags override values from `--config` files.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tscan_core::data::TreatmentKind;
use tscan_core::eval::TieMode;

#[derive(Debug, Parser)]
#[command(name = "tscan", version, about = "Two-stage context-aware uplift modeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic biased dataset with known effects.
    GenData(GenDataArgs),
    /// Print the synthetic data-generating process as JSON.
    DescribeDgp(DescribeDgpArgs),
    /// Train CAN-U (stage 1), CAN-D (stage 2), or both.
    Train(TrainArgs),
    /// Write factual and counterfactual predictions of a checkpoint.
    Predict(PredictArgs),
    /// Score prediction files or checkpoints with the uplift metric suite.
    Evaluate(EvaluateArgs),
    /// Full benchmark: data, every scorer, evaluation, across seeds.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TreatmentArg {
    Binary,
    Continuous,
}

impl From<TreatmentArg> for TreatmentKind {
    fn from(t: TreatmentArg) -> Self {
        match t {
            TreatmentArg::Binary => TreatmentKind::Binary,
            TreatmentArg::Continuous => TreatmentKind::Continuous,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON file with `synthetic` and `test_fraction`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub treatment: Option<TreatmentArg>,
    #[arg(long)]
    pub bias_strength: Option<f64>,
    #[arg(long)]
    pub context_modulation: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Draw the test file independently with this selection strength.
    #[arg(long)]
    pub test_bias_strength: Option<f64>,
    /// Output directory for train.csv, test.csv, schema.json, dgp.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DescribeDgpArgs {
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblateArg {
    /// Remove context features.
    Rc,
    /// Replace context attention with a dense layer.
    Ra,
    /// Replace the isotonic head with a dense layer.
    Riso,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset (CSV or JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// JSON file with `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub stage: StageArg,
    #[arg(long, value_enum)]
    pub ablate: Option<AblateArg>,
    /// Stop after stage 1; CAN-U is the final model.
    #[arg(long)]
    pub can_u_only: bool,
    /// CAN-U checkpoint for `--stage 2` (default: `<out>/canu.ckpt`).
    #[arg(long)]
    pub can_u: Option<PathBuf>,
    /// Pseudo-label CSV for `--stage 2` without a CAN-U checkpoint.
    #[arg(long)]
    pub pseudo_labels: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Schema the dataset was written with; must equal the checkpoint's.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Fixed counterfactual treatment (continuous data only).
    #[arg(long)]
    pub t_cf: Option<f64>,
    /// Seed for sampled counterfactual treatments (continuous data only).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset with outcomes and treatments.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Prediction CSV, as `NAME=PATH` or `PATH` (named by file stem). Repeatable.
    #[arg(long = "predictions")]
    pub predictions: Vec<String>,
    /// Model checkpoint, as `NAME=PATH` or `PATH`. Repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<String>,
    /// Add a scorer that ranks by the dataset's `true_ite` column.
    #[arg(long)]
    pub oracle: bool,
    /// Add a uniform random scorer.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated dataset columns defining strata (default: `group_key`).
    #[arg(long, value_delimiter = ',')]
    pub group_by: Option<Vec<String>>,
    /// JSON file with evaluation options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ties: Option<TieArg>,
    #[arg(long)]
    pub min_group_size: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Output directory for report.json and curves.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TieArg {
    Stable,
    Average,
}

impl From<TieArg> for TieMode {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::Stable => TieMode::Stable,
            TieArg::Average => TieMode::Average,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, conflicts_with = "from_manifest")]
    pub config: Option<PathBuf>,
    /// Rerun with the configuration recorded in a bench manifest.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Seeds run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}
