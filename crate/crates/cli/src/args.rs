use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use bdrc::decode::ScoreMode;

#[derive(Parser, Debug)]
#[command(name = "bdrc", version, about = "Temporal action detection on snippet feature streams", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Run detection with a trained checkpoint.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Render an SVG chart from an eval report or a loss history.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub videos: Option<usize>,
    /// Snippets per video.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Hold out the last N videos as `test.json`; the rest go to `train.json`.
    #[arg(long)]
    pub test_videos: Option<usize>,
    /// Store features inside the manifest instead of binary blobs.
    #[arg(long)]
    pub inline: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Number of bins W per boundary.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Bin length b in snippets of the level.
    #[arg(long)]
    pub bin_cov: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda_rs: Option<f64>,
    #[arg(long)]
    pub lambda_norm: Option<f64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lambda_vid: Option<f64>,
    #[arg(long)]
    pub lambda_cls: Option<f64>,
    /// NMS tIoU threshold.
    #[arg(long)]
    pub nms: Option<f64>,
    #[arg(long)]
    pub max_keep: Option<usize>,
    /// cls_only, cls_start, cls_end, cls_start_end, cls_sqrt_start_end, or 1-5.
    #[arg(long)]
    pub score_mode: Option<ScoreMode>,
    /// Keep every category instead of gating on video-level probabilities.
    #[arg(long)]
    pub no_rcm: bool,
    /// Write segments in seconds, given the duration of one snippet.
    #[arg(long)]
    pub snippet_seconds: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `start:step:end` or a comma list.
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Minimum score for a prediction to count toward category F1.
    #[arg(long)]
    pub f1_score_threshold: Option<f64>,
    /// Predictions are in seconds; convert with this snippet duration.
    #[arg(long)]
    pub snippet_seconds: Option<f64>,
    /// Also write a per-threshold mAP bar chart.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Eval report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Loss history CSV from `train`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}
