use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use expoloss::BaseLoss;

#[derive(Debug, Parser)]
#[command(
    name = "expoloss",
    version,
    about = "Robust e-exponentiated losses: experiments and bound calculators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Loss curves of the transformed logistic and hinge losses as CSV.
    TransformPlot(TransformPlotArgs),
    /// Analytic loss gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train one model per seed, streaming epoch metrics as JSON lines.
    Train(TrainArgs),
    /// Test accuracy over the grid of exponents, noise rates and seeds.
    NoiseBench(TrainArgs),
    /// Local and global Lipschitz confidence bounds for one query.
    Bounds(BoundsArgs),
    /// Monte Carlo check of the two-point Hoeffding deviation bound.
    Lemma2Mc(Lemma2Args),
}

/// Flags shared by every subcommand. Each command reads the ones that apply.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// logistic, hinge or softmax
    #[arg(long)]
    pub loss: Option<BaseLoss>,
    /// Exponent e (repeatable).
    #[arg(long = "e")]
    pub e: Vec<f64>,
    /// Crossover threshold c.
    #[arg(long, default_value_t = expoloss::transform::DEFAULT_C)]
    pub c: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub warmup_frac: f64,
    /// Symmetric label-noise rate on the training split (repeatable).
    #[arg(long = "noise-rate")]
    pub noise_rate: Vec<f64>,
    /// Number of seeds; seeds run from --seed upwards.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Result path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON document whose fields override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TransformPlotArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    pub min: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub max: f64,
    #[arg(long, default_value_t = 201)]
    pub steps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Logit count for the softmax loss.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Hidden layer widths, e.g. `64,32`; a linear model when absent for
    /// binary losses.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// sgd or adam
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Training/test rows kept from the IDX files.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Where epoch metrics go as JSON lines; stdout when absent (train only).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Save the final model of each seed as a JSON checkpoint (train only).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sample count N.
    #[arg(long)]
    pub n: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Weight-ball radius M.
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub l_l: Option<f64>,
    #[arg(long)]
    pub c_l: Option<f64>,
    /// Constant L_R; when absent and --loss is given, the uniform-margin
    /// estimate of that loss is used.
    #[arg(long)]
    pub l_r: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct Lemma2Args {
    #[command(flatten)]
    pub common: Common,
    /// Dataset size per trial.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    pub rho: f64,
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    #[arg(long)]
    pub reference_samples: Option<usize>,
}
