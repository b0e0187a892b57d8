use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use donn_core::data::SyntheticKind;
use donn_core::model::Preset;

use crate::config::LossName;

#[derive(Debug, Parser)]
#[command(
    name = "donn",
    version,
    about = "Train and run RGB diffractive optical neural networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML config; flags override config fields.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a checkpoint on individual images.
    Infer(InferArgs),
    /// Propagate one image through free space and save each step.
    Propagate(PropagateArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic image/mask dataset.
    GenSynth(GenSynthArgs),
}

/// Model and optimization fields shared by `train` and `gradcheck`.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelOverrides {
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Skip list such as "1-6,2-7,3-8"; an empty string removes all skips.
    #[arg(long)]
    pub skips: Option<String>,
    #[arg(long)]
    pub pitch: Option<f64>,
    #[arg(long)]
    pub wavelength: Option<f64>,
    #[arg(long)]
    pub distance: Option<f64>,
    #[arg(long)]
    pub pad_factor: Option<usize>,
    #[arg(long)]
    pub loss: Option<LossName>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run config.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Binarize with Otsu's threshold instead of 0.5.
    #[arg(long)]
    pub otsu: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss reported alongside the metrics.
    #[arg(long, default_value = "mse")]
    pub loss: LossName,
    #[arg(long, default_value_t = 1.0)]
    pub pos_weight: f64,
    #[arg(long)]
    pub otsu: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub otsu: bool,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    pub image: PathBuf,
    /// Distance per step in metres.
    #[arg(long)]
    pub z: f64,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub pad_factor: usize,
    #[arg(long, default_value_t = donn_core::model::DEFAULT_PITCH_M)]
    pub pitch: f64,
    #[arg(long, default_value_t = donn_core::model::DEFAULT_WAVELENGTH_M)]
    pub wavelength: f64,
    /// Resample the image to this side first.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
    /// Number of sampled parameters.
    #[arg(long, default_value_t = 20)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Test fixture: scale the analytic gradient before comparing.
    #[arg(long, hide = true)]
    pub corrupt_adjoint: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value = "lanes")]
    pub kind: SyntheticKind,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
}
