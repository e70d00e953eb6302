//! Command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use iic_core::nn::Arch;
use iic_core::report::Method;
use iic_core::synth::Task;

#[derive(Debug, Parser)]
#[command(name = "iic", version, about = "Component-space explanations for multimodal wearable time-series classifiers")]
pub struct Cli {
    /// File of `key=value` lines supplying defaults for any flag of the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for explanation and evaluation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted class signatures.
    Generate(GenerateArgs),
    /// Train a window classifier on a generated or loaded dataset.
    Train(TrainArgs),
    /// Explain the eval split with IIC, LCBM or FCSHAP.
    Explain(ExplainArgs),
    /// Accuracy, fidelity and sufficiency of a set of explanations.
    Evaluate(EvaluateArgs),
    /// Global importance table and component distributions.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    State,
    Seizure,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::State => Task::State,
            TaskArg::Seizure => Task::Seizure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Fcn,
    Lstm,
    Transformer,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Fcn => Arch::Fcn,
            ArchArg::Lstm => Arch::Lstm,
            ArchArg::Transformer => Arch::Transformer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Iic,
    Lcbm,
    Fcshap,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Iic => Method::Iic,
            MethodArg::Lcbm => Method::Lcbm,
            MethodArg::Fcshap => Method::Fcshap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Synthetic task.
    #[arg(long, value_enum, default_value = "state")]
    pub task: TaskArg,
    /// Seed fixing the whole dataset.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of subjects (task default if omitted).
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Windows per class and subject (task default if omitted).
    #[arg(long)]
    pub windows_per_class: Option<usize>,
    /// Dataset file format.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Model architecture (task default: lstm for state, transformer for seizure).
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Independent restarts; the one with the lowest eval loss is kept.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Hidden size.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// L2 weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Initialization and shuffling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    /// Directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Directory written by `train` (required for `--method iic`).
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Explainer.
    #[arg(long, value_enum, default_value = "iic")]
    pub method: MethodArg,
    /// IIC optimization epochs.
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// IIC Adam learning rate.
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Allowed output degradation.
    #[arg(long, default_value_t = 0.01)]
    pub max_deg: f64,
    /// Weight of the degradation hinge.
    #[arg(long, default_value_t = 25.0)]
    pub penalty: f64,
    /// Weights above this count as kept in the binary explanation.
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
    /// Seed for the comparison explainers' training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the decomposition of every explained window.
    #[arg(long)]
    pub dump_components: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Directory written by `train` (required for IIC explanations).
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Directory written by `explain`.
    #[arg(long, value_name = "DIR")]
    pub explanations: PathBuf,
    /// Numbers of top entries to mask, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub fidelity_k: Vec<usize>,
    /// Sufficiency thresholds, comma separated (default 0.01 for iic and lcbm, 0.02 for fcshap).
    #[arg(long, value_delimiter = ',')]
    pub sufficiency_tau: Vec<f64>,
    /// Seed of the random-masking control.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory written by `explain`.
    #[arg(long, value_name = "DIR")]
    pub explanations: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
