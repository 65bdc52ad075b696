//! Command-line front end.
//!
//! Every command that computes something writes its artifacts into `--out`
//! and echoes its full configuration into the JSON it emits, so a report can
//! be regenerated from its own contents.

mod commands;
mod files;
mod inputs;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use commands::{cmd_attribute, cmd_evaluate, cmd_fit, cmd_heatmap, cmd_sweep, Report};
pub use files::{parse_pgm, read_mask_csv, render_heatmap, write_mask_csv, write_pgm};
pub use inputs::{BaselineSpec, DataSpec, Shape, TargetSpec};

use crate::error::FansError;
use crate::optimize::Relaxation;
use crate::parallel;

#[derive(Debug, Parser)]
#[command(name = "fans", version, about = "Feature attribution by necessity and sufficiency")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from the built-in zoo and save it as JSON.
    Fit(FitArgs),
    /// Score a subset, or search for the best relaxed mask.
    Attribute(AttributeArgs),
    /// Compute attribution quality metrics.
    Evaluate(EvaluateArgs),
    /// Score a subset over a grid of (b, c).
    Sweep(SweepArgs),
    /// Render a mask as a grayscale PGM image.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// CSV path, `idx:IMAGES,LABELS`, `example1:N[:SEED]` or `planted:N:D:K[:SEED]`.
    #[arg(long)]
    pub data: DataSpec,
    /// `logistic`, `mlp:16,8` or `mlp:16,8:tanh`.
    #[arg(long, default_value = "logistic")]
    pub arch: String,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `model.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AblateFlag {
    /// Drop the sufficiency module.
    Sf,
    /// Drop the necessity module.
    Nc,
    /// Use the raw samples instead of resampling.
    Sir,
}

/// Model, data, target and estimator settings shared by the scoring commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimatorArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV path, `idx:IMAGES,LABELS`, `example1:N[:SEED]` or `planted:N:D:K[:SEED]`.
    #[arg(long)]
    pub data: DataSpec,
    /// Row index into the data, or an inline comma-separated vector.
    #[arg(long, default_value = "0")]
    pub target: TargetSpec,
    /// Use only the first N rows as the sample set.
    #[arg(long)]
    pub samples: Option<usize>,
    /// `auto` (zeros for tabular, uniform noise for images), `zeros`,
    /// `uniform` or a comma-separated vector.
    #[arg(long, default_value = "auto")]
    pub baseline: BaselineSpec,
    /// Neighbourhood boundary; defaults to the Scott-rule heuristic.
    #[arg(long)]
    pub b: Option<f64>,
    /// Prediction-change threshold; defaults to the noise heuristic.
    #[arg(long)]
    pub c: Option<f64>,
    /// Noise scale for the threshold heuristic.
    #[arg(long, default_value_t = 0.001)]
    pub sigma: f64,
    /// Noise draws per sample for the threshold heuristic.
    #[arg(long, default_value_t = 10)]
    pub n_noise: usize,
    /// Bernoulli rate of the perturbation mask.
    #[arg(long, default_value_t = 0.5)]
    pub phi: f64,
    /// Interventional draws per factual sample.
    #[arg(long, default_value_t = 50)]
    pub t: usize,
    /// Mask draws inside each soft weight.
    #[arg(long, default_value_t = 8)]
    pub n_inner: usize,
    /// Size of each resampled factual set.
    #[arg(long, default_value_t = 1)]
    pub resample: usize,
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<AblateFlag>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttributeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub est: EstimatorArgs,
    /// Score this 1-based subset instead of optimising a mask, e.g. `1,3`.
    #[arg(long, value_delimiter = ',')]
    pub subset: Option<Vec<usize>>,
    /// Optimisation epochs; 30 for tabular data, 50 for images.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate; 0.1 for tabular data, 0.001 for images.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum, default_value = "interpolated")]
    pub relaxation: RelaxationArg,
    /// Also write `heatmap.pgm` with this `HxW` shape.
    #[arg(long)]
    pub heatmap: Option<Shape>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RelaxationArg {
    Interpolated,
    Literal,
}

impl From<RelaxationArg> for Relaxation {
    fn from(r: RelaxationArg) -> Self {
        match r {
            RelaxationArg::Interpolated => Relaxation::Interpolated,
            RelaxationArg::Literal => Relaxation::Literal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerArg {
    /// Absolute input gradient.
    Saliency,
    /// Relaxed-mask optimisation with frozen seeds.
    Fans,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub est: EstimatorArgs,
    /// Attribution to evaluate, as written by `attribute` (`feature,score`).
    #[arg(long)]
    pub attribution: PathBuf,
    /// Any of `inf`, `irof`, `fid+`, `fid-`, `sens`, `spa`, `recall@N`.
    #[arg(long, value_delimiter = ',', default_value = "inf,irof,fid+,fid-,spa")]
    pub metrics: Vec<String>,
    /// Monte-Carlo draws for infidelity.
    #[arg(long, default_value_t = 100)]
    pub n_inf: usize,
    /// Fraction of top-scored features retained for fidelity.
    #[arg(long, default_value_t = 0.25)]
    pub keep: f64,
    /// L-infinity radius for max-sensitivity.
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    /// Perturbed inputs for max-sensitivity.
    #[arg(long, default_value_t = 5)]
    pub n_sens: usize,
    #[arg(long, value_enum, default_value = "saliency")]
    pub explainer: ExplainerArg,
    /// Image shape `HxW` for IROF tiles; tabular data uses one segment per feature.
    #[arg(long)]
    pub shape: Option<Shape>,
    #[arg(long, default_value_t = 4)]
    pub tile: usize,
    /// Sort magnitudes in descending order inside sparseness.
    #[arg(long)]
    pub paper_literal_sort: bool,
    /// Epochs for the `fans` explainer.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub est: EstimatorArgs,
    /// 1-based subset to score.
    #[arg(long, value_delimiter = ',', required = true)]
    pub subset: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub b_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub c_grid: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeatmapArgs {
    /// Mask CSV (`feature,score`).
    #[arg(long)]
    pub mask: PathBuf,
    /// `HxW`, with `H * W` equal to the mask length.
    #[arg(long)]
    pub shape: Shape,
    /// Output PGM file.
    #[arg(long)]
    pub out: PathBuf,
}

fn hint(e: &FansError) -> Option<&'static str> {
    match e {
        FansError::EmptySupport { .. } => Some(
            "no sample matched the factual event; try a larger --b or --c, more --samples, or a different --subset",
        ),
        FansError::Divergence { .. } => Some("the objective became non-finite; lower --lr"),
        _ => None,
    }
}

/// Parse `args` and run the selected command. Returns the process exit code:
/// 0 success, 2 configuration or validation error, 3 numeric failure,
/// 4 empty factual support.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = std::env::var("FANS_THREADS").ok().and_then(|v| v.parse().ok()) {
        parallel::init_threads(n);
    }
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Attribute(a) => cmd_attribute(a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
        Command::Heatmap(a) => cmd_heatmap(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = hint(&e) {
                eprintln!("hint: {h}");
            }
            e.exit_code()
        }
    }
}
