//! The `restrictml` command line: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error.

mod commands;
pub mod manifest;
pub mod modelfile;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("{0:#}")]
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

/// Tags a fallible result with the exit class of its failure.
pub(crate) trait Classify<T> {
    fn data(self) -> Result<T, CliError>;
    fn internal(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn data(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Data(e.into()))
    }

    fn internal(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Internal(e.into()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "restrictml", version, about = "Restriction-digest applicability pipeline")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output file (or directory, for multi-file commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate FASTA and enzyme-table inputs.
    Ingest(IngestArgs),
    /// Slide windows over genes and label each distinct subsequence.
    Simulate(SimulateArgs),
    /// Turn an entries CSV into a feature dataset CSV.
    Featurize(FeaturizeArgs),
    /// Pairwise feature correlations and redundant pairs.
    Corr(CorrArgs),
    /// Stratified train/test split.
    Split(SplitArgs),
    /// Train a kernel SVM, optionally on principal components.
    TrainSvm(TrainSvmArgs),
    /// Train a random forest.
    TrainForest(TrainForestArgs),
    /// Train the convolutional network on the SEQ columns.
    TrainCnn(TrainCnnArgs),
    /// Score a model on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Per-position nucleotide histograms split by class and correctness.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub genes: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Enzyme TSV; the bundled catalog when omitted.
    #[arg(long)]
    pub enzymes: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub genes: PathBuf,
    /// Single-record FASTA shared by all entries; each gene is its own
    /// reference when omitted.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub enzymes: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = restrictml_core::synthsim::DEFAULT_WINDOW_LENGTHS)]
    pub windows: Vec<usize>,
    /// Also write synthesis traces of every gene (needs --reference).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long, default_value_t = restrictml_core::synthsim::DEFAULT_MIN_FRAGMENT)]
    pub min_fragment: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum R2ModeArg {
    Mean,
    Literal,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub entries: PathBuf,
    /// FASTA files whose records may be named as reference ids.
    #[arg(long)]
    pub genes: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = restrictml_core::features::DEFAULT_SEQ_WIDTH)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub b: usize,
    #[arg(long, default_value_t = 8)]
    pub p: usize,
    #[arg(long, value_enum, default_value_t = R2ModeArg::Mean)]
    pub r2_mode: R2ModeArg,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = restrictml_core::dataset::DEFAULT_CORRELATION_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = restrictml_core::dataset::DEFAULT_TRAIN_SIZE)]
    pub train_size: usize,
    #[arg(long, default_value_t = restrictml_core::dataset::DEFAULT_TRAIN_TRUE_RATIO)]
    pub train_ratio: f64,
    #[arg(long, default_value_t = restrictml_core::dataset::DEFAULT_TEST_SIZE)]
    pub test_size: usize,
    #[arg(long, default_value_t = restrictml_core::dataset::DEFAULT_TEST_TRUE_RATIO)]
    pub test_ratio: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainSvmArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = KernelArg::Poly)]
    pub kernel: KernelArg,
    /// Principal components fed to the SVM; 0 uses standardized raw features.
    #[arg(long, default_value_t = 2)]
    pub pcs: usize,
    #[arg(long = "C", alias = "c", default_value_t = restrictml_learn::svm::DEFAULT_C)]
    pub c: f64,
    /// Defaults to 1 / input dimension.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = restrictml_learn::svm::DEFAULT_DEGREE)]
    pub degree: u32,
    #[arg(long, default_value_t = 0.0)]
    pub coef0: f64,
    #[arg(long, default_value_t = restrictml_learn::svm::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = restrictml_learn::svm::DEFAULT_MAX_PASSES)]
    pub max_passes: usize,
    /// Write the PC scores of the training rows (needs --pcs >= 1).
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BagArg {
    TwoThirds,
    Classical,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainForestArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = restrictml_learn::forest::DEFAULT_TREES)]
    pub trees: usize,
    /// Defaults to ceil(sqrt(feature count)).
    #[arg(long)]
    pub features_per_node: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, value_enum, default_value_t = BagArg::TwoThirds)]
    pub bag: BagArg,
    /// Also train these tree counts and write their OOB errors to `<out>.sweep.csv`.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCnnArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.1)]
    pub validation: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `predictions.csv` from `evaluate`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command, returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
