use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "canbnn", version, about = "Binarized neural network intrusion detection for CAN bus traffic")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled capture as canonical CSV.
    Generate(GenerateArgs),
    /// Fit the ID dictionary and interval thresholds on benign frames.
    Fit(FitArgs),
    /// Train a model and write model.ckpt and train_log.csv.
    Train(TrainArgs),
    /// Compile a checkpoint into the bit-packed format.
    Pack(PackArgs),
    /// Score a model on labeled captures.
    Eval(EvalArgs),
    /// Time packed against reference inference.
    Bench(BenchArgs),
    /// Classify every frame of a capture.
    Detect(DetectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Canonical,
    CarHacking,
    CanIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Binary,
    #[value(alias = "multiclass")]
    Multi,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Capture file; repeat for several.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,

    #[arg(long, value_enum, default_value = "canonical")]
    pub format: Format,

    /// Label manifest mapping dataset flags to class codes.
    #[arg(long)]
    pub labels: Option<PathBuf>,

    /// Keep frames whose timestamps go backwards by more than 1 ms.
    #[arg(long)]
    pub allow_unordered: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Built-in scenario: benign, flooding, fuzzing, spoofing or mixed.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    pub preset: Option<String>,

    /// Scenario TOML file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,

    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 6)]
    pub bit_width: u8,

    #[arg(long, default_value_t = 0.01, conflicts_with_all = ["thres1", "thres2"])]
    pub q_low: f64,

    #[arg(long, default_value_t = 0.99, conflicts_with_all = ["thres1", "thres2"])]
    pub q_high: f64,

    /// Fixed lower interval threshold in seconds.
    #[arg(long, requires = "thres2")]
    pub thres1: Option<f64>,

    /// Fixed upper interval threshold in seconds.
    #[arg(long, requires = "thres1")]
    pub thres2: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long)]
    pub featurizer: PathBuf,

    #[arg(long, value_enum, default_value = "binary")]
    pub mode: ModeArg,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, default_value_t = 100)]
    pub epochs: usize,

    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.15, 0.15])]
    pub split: Vec<f64>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Checkpoint or packed model.
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long)]
    pub featurizer: PathBuf,

    /// Binary decision threshold on the attack probability.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,

    /// Score only the test part of the split `train` would make.
    #[arg(long)]
    pub holdout: bool,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.15, 0.15])]
    pub split: Vec<f64>,

    /// Also write the metrics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Number of random input vectors.
    #[arg(long, default_value_t = 10_000)]
    pub messages: usize,

    #[arg(long, default_value_t = 5)]
    pub reps: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Capture file.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, value_enum, default_value = "canonical")]
    pub format: Format,

    #[arg(long)]
    pub labels: Option<PathBuf>,

    #[arg(long)]
    pub allow_unordered: bool,

    /// Checkpoint or packed model.
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long)]
    pub featurizer: PathBuf,

    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,

    #[arg(long)]
    pub out: PathBuf,
}
