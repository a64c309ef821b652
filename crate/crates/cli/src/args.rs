use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use n2f_core::{Loss, Scheme, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "n2f", version, about = "Single-image blind denoising")]
pub struct Cli {
    /// Worker threads for independent images and channels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise an image, a TIFF stack or a directory of images.
    Denoise(DenoiseArgs),
    /// Write float copies of clean images with Gaussian noise added.
    AddNoise(AddNoiseArgs),
    /// Denoise clean/noisy pairs and report PSNR, SSIM and time per image.
    Benchmark(BenchmarkArgs),
    /// Compare the checkerboard, quad and exact pair schemes on shared noise.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Base seed; falls back to N2F_SEED, then 0.
    #[arg(long, env = "N2F_SEED")]
    pub seed: Option<u64>,

    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,

    #[arg(long, default_value_t = Loss::Bce)]
    pub loss: Loss,

    /// Epochs without strict validation improvement before stopping.
    #[arg(long, default_value_t = 100)]
    pub patience: usize,

    /// Number of final validation outputs averaged into the result.
    #[arg(long = "avg-window", default_value_t = 100)]
    pub avg_window: usize,

    #[arg(long = "max-epochs", default_value_t = 20_000)]
    pub max_epochs: usize,

    /// JSON-lines file receiving one record per training epoch.
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
}

impl TrainArgs {
    pub fn config(&self, scheme: Scheme) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            scheme,
            lr: self.lr,
            patience_epochs: self.patience,
            avg_window: self.avg_window,
            max_epochs: self.max_epochs,
            seed: self.seed.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    /// Image file or directory.
    #[arg(long)]
    pub input: PathBuf,

    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,

    /// Ground truth, required by the exact scheme. File or directory matching
    /// the input by file stem.
    #[arg(long)]
    pub clean: Option<PathBuf>,

    #[arg(long, default_value_t = Scheme::Checkerboard)]
    pub scheme: Scheme,

    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AddNoiseArgs {
    #[arg(long)]
    pub input: PathBuf,

    /// Output TIFF file, or directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,

    /// Noise standard deviation in the units of the input samples.
    #[arg(long)]
    pub sigma: f64,

    /// Falls back to N2F_SEED, then 0.
    #[arg(long, env = "N2F_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Directory of clean reference images.
    #[arg(long)]
    pub clean: PathBuf,

    /// Directory of noisy images paired with the clean set by file stem.
    #[arg(long, conflicts_with = "sigma", required_unless_present = "sigma")]
    pub input: Option<PathBuf>,

    /// Corrupt the clean images on the fly with this noise level.
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Directory receiving the denoised images.
    #[arg(long)]
    pub output: Option<PathBuf>,

    /// CSV metrics report.
    #[arg(long)]
    pub report: Option<PathBuf>,

    #[arg(long, default_value_t = Scheme::Checkerboard)]
    pub scheme: Scheme,

    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Directory of clean images.
    #[arg(long)]
    pub clean: PathBuf,

    #[arg(long)]
    pub sigma: f64,

    /// CSV with one row per image and a PSNR column per scheme.
    #[arg(long)]
    pub report: Option<PathBuf>,

    #[command(flatten)]
    pub train: TrainArgs,
}
