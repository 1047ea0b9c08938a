use std::path::PathBuf;

use caudg_core::data::{DatasetKind, Setting};
use caudg_core::losses::{ClsMode, ConMode};
use caudg_core::nn::PairMeasure;
use caudg_core::pipeline::Variant;
use clap::{Args, Parser, Subcommand};

/// Domain-generalizing activity recognition from wearable sensor windows.
#[derive(Debug, Parser)]
#[command(name = "caudg", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw public recordings into a windowed dataset directory.
    Import(ImportArgs),
    /// Generate the synthetic four-domain dataset.
    Synth(SynthArgs),
    /// Train one model with one held-out target domain.
    Train(TrainArgs),
    /// Leave-one-domain-out: one run per target domain.
    Lodo(LodoArgs),
    /// Leave-one-domain-out sweeps over method variants and seeds.
    Ablate(AblateArgs),
    /// Score a saved model on a windowed dataset.
    Evaluate(EvaluateArgs),
    /// Write causal features of a saved model for plotting.
    ExportEmbeddings(ExportArgs),
    /// Aggregate every results.json under a directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// dsads, uschad, pamap2 or ucihar. Defaults to ucihar for cross-dataset.
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    /// cross-person, cross-position, cross-dataset or one-to-one.
    #[arg(long)]
    pub setting: Setting,
    #[arg(long)]
    pub raw_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `default` (60 windows per class and domain) or `small` (12).
    #[arg(long, default_value = "default")]
    pub preset: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML overrides, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training settings shared by train, lodo and ablate.
#[derive(Debug, Default, Args)]
pub struct Knobs {
    /// TOML overrides, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Architecture and schedule preset. Inferred from the dataset if omitted.
    #[arg(long)]
    pub preset: Option<String>,
    /// Seed. Falls back to CAUDG_SEED, then the preset.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the independence term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the causal consistency term.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Density threshold for intervention styles.
    #[arg(long)]
    pub ids_eps: Option<f64>,
    #[arg(long)]
    pub ids_max_draws: Option<usize>,
    /// symmetric-sum or literal.
    #[arg(long)]
    pub loss_con_mode: Option<ConMode>,
    /// hsic, orth or corr.
    #[arg(long)]
    pub ind_measure: Option<PairMeasure>,
    /// default or all-pairs.
    #[arg(long)]
    pub cls_mode: Option<ClsMode>,
    /// Treat the unprojected side of each alignment term as a constant.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cdpl_stopgrad: Option<bool>,
    /// One projection head for both branches.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cdpl_shared: Option<bool>,
    /// Let gradients flow through the batch margin of the consistency hinge.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub margin_grad: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Windows per source domain per iteration.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out domain index.
    #[arg(long)]
    pub target: usize,
    /// Source domains (comma separated). Defaults to every other domain.
    #[arg(long, value_delimiter = ',')]
    pub source: Vec<usize>,
    /// Method variant; see `caudg ablate --list`.
    #[arg(long)]
    pub ablation: Option<Variant>,
    #[command(flatten)]
    pub knobs: Knobs,
    /// Root directory for run directories.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LodoArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Only these targets (comma separated). Defaults to all domains.
    #[arg(long, value_delimiter = ',')]
    pub target: Vec<usize>,
    #[arg(long)]
    pub ablation: Option<Variant>,
    #[command(flatten)]
    pub knobs: Knobs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Print the available variants and exit.
    #[arg(long)]
    pub list: bool,
    #[arg(long, required_unless_present = "list")]
    pub data: Option<PathBuf>,
    /// Variants to run (comma separated). Defaults to every ablation row.
    #[arg(long, value_delimiter = ',')]
    pub ablation: Vec<Variant>,
    /// Seeds (comma separated). Defaults to the resolved seed alone.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    pub target: Vec<usize>,
    #[command(flatten)]
    pub knobs: Knobs,
    #[arg(long, required_unless_present = "list")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory or its model/ subdirectory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Only windows of this domain. Defaults to all windows.
    #[arg(long)]
    pub target: Option<usize>,
    /// Where to write eval.json and confusion.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub runs: PathBuf,
    /// Where to write report.txt and report.csv. Defaults to --runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
