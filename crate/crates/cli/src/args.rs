//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deepwarp_core::dataset::WarpKind;
use deepwarp_nn::LossMode;

#[derive(Parser, Debug)]
#[command(
    name = "deepwarp",
    version,
    about = "Non-rigid image registration: learned U-Net, diffeomorphic demons and phase correlation",
    arg_required_else_help = true,
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for untimed parallel work (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    /// key=value file supplying defaults for the chosen subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate phantom (or user image) pairs and write a manifest.
    MakeDataset(MakeDatasetArgs),
    /// Apply, generate or invert warp fields.
    #[command(subcommand)]
    Warp(WarpCommand),
    /// Classical registration.
    #[command(subcommand)]
    Register(RegisterCommand),
    /// Train a registration network.
    Train(TrainArgs),
    /// Register one pair with a trained network.
    Infer(InferArgs),
    /// Print a checkpoint header and optionally dump intermediate activations.
    Inspect(InspectArgs),
    /// Timing and quality experiments.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Linear,
    Spherical,
    Sinusoidal,
    Mixed,
}

impl From<Kind> for WarpKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Linear => WarpKind::Linear,
            Kind::Spherical => WarpKind::Spherical,
            Kind::Sinusoidal => WarpKind::Sinusoidal,
            Kind::Mixed => WarpKind::Mixed,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Msessim,
    SsimOnly,
    MseOnly,
}

impl From<Loss> for LossMode {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Msessim => LossMode::MseSsim,
            Loss::SsimOnly => LossMode::SsimOnly,
            Loss::MseOnly => LossMode::MseOnly,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
}

/// Synthetic data generation shared by several subcommands.
#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    /// Base images to generate.
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u32).range(2..))]
    pub n_images: u32,
    /// Random warps per base image.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub warps: u32,
    /// Share of base images held out for validation, in (0, 1).
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    /// Largest warp displacement in pixels (default: 5 px per 64 px of size).
    #[arg(long)]
    pub max_amplitude: Option<f64>,
    /// Smallest warp displacement in pixels (default: 0.75 x max).
    #[arg(long)]
    pub min_amplitude: Option<f64>,
}

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(16..))]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the .pgm files in this directory as base images instead of phantoms.
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum WarpCommand {
    /// Backward-warp an image: out(p) = image(p - phi(p)).
    Apply {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a random invertible field.
    Random {
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(2..))]
        size: u32,
        #[arg(long, value_enum, default_value_t = Kind::Mixed)]
        kind: Kind,
        /// Largest displacement in pixels (reduced if the field would not be invertible).
        #[arg(long, default_value_t = 5.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert a field by fixed-point iteration.
    Invert {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
        iterations: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum RegisterCommand {
    /// Integer translation by phase correlation; prints "di dj peak".
    Phase {
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        template: PathBuf,
        /// Taper both images with a Hann window first.
        #[arg(long)]
        hann: bool,
    },
    /// Multi-resolution diffeomorphic demons.
    Demons(DemonsArgs),
}

#[derive(Args, Debug)]
pub struct DemonsArgs {
    #[arg(long)]
    pub subject: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub levels: u32,
    /// Iterations at each pyramid level.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u32).range(1..))]
    pub iterations: u32,
    /// Gaussian sigma regularizing the accumulated field, in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub smoothing_sigma: f64,
    /// Gaussian sigma applied to each update, in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub update_sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub max_step: f64,
    #[arg(long)]
    pub out_warped: PathBuf,
    #[arg(long)]
    pub out_field: Option<PathBuf>,
    /// Per-iteration MSE/SSIM trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Architecture and schedule bundle.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Train on this manifest instead of generating phantoms.
    #[arg(long, value_name = "MANIFEST")]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum, default_value_t = Loss::Msessim)]
    pub loss: Loss,
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Comma-separated epochs after which to save `epoch<E>.unt1`.
    #[arg(long, value_delimiter = ',')]
    pub snapshot_epochs: Vec<usize>,
    /// Directory for snapshots (default: next to --out).
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub subject: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long)]
    pub out_warped: Option<PathBuf>,
    #[arg(long)]
    pub out_field: Option<PathBuf>,
    /// Green (warped) / magenta (template) overlay PPM.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Write one PGM per channel of every convolution level here.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
    /// Probe pair; a phantom pair drawn from --seed is used when absent.
    #[arg(long, requires = "template")]
    pub subject: Option<PathBuf>,
    #[arg(long, requires = "subject")]
    pub template: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where benchmark pairs come from.
#[derive(Args, Debug, Clone)]
pub struct PairSource {
    /// Dataset manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
    pub split: SplitArg,
    /// Use only the first N pairs of the split.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum BenchCommand {
    /// Time learned inference.
    Inference {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        pairs: PairSource,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
        repeats: u32,
        /// Per-run CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep demons over iterations x levels.
    Demons {
        #[command(flatten)]
        pairs: PairSource,
        #[arg(long, value_delimiter = ',', default_value = "10,20,40,80")]
        iterations: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        levels: Vec<usize>,
        /// Also time this model and report the speed ratio.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        repeats: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per loss from a shared initialization.
    Ablation {
        #[arg(long, value_name = "MANIFEST")]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Architecture overrides; the input size defaults to the dataset's.
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        epochs: Option<u32>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare training snapshots on a pair set.
    Progression {
        /// EPOCH=PATH, repeatable, in increasing epoch order.
        #[arg(long = "checkpoint", value_name = "EPOCH=PATH", required = true)]
        checkpoints: Vec<String>,
        #[command(flatten)]
        pairs: PairSource,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct ArchArgs {
    /// Override the preset's input size.
    #[arg(long)]
    pub size: Option<u32>,
    /// Override the preset's depth.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Override the preset's base width.
    #[arg(long)]
    pub width: Option<u32>,
}

impl ArchArgs {
    pub fn apply(&self, mc: &mut deepwarp_nn::UNetConfig) {
        if let Some(v) = self.size {
            mc.input_size = v as usize;
        }
        if let Some(v) = self.depth {
            mc.depth = v as usize;
        }
        if let Some(v) = self.width {
            mc.base_width = v as usize;
        }
    }
}
