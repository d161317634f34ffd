use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pausebench", version, about = "Pause-type detection and exertion classification benchmark")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Extract acoustic features from the audio listed in a manifest.
    Features(FeaturesArgs),
    /// List the 15 s windows of every recording.
    Segment(SegmentArgs),
    /// Subject-disjoint train/val/test split balanced by duration.
    Split(SplitArgs),
    /// Fit a pause model (and Stage-1 detector for setup 3).
    Train(TrainArgs),
    /// Raw model outputs on the windows of one split.
    Predict(PredictArgs),
    /// Turn raw outputs into cleaned, tail-masked frame labels.
    Postproc(PostprocArgs),
    /// Score post-processed labels against the reference.
    Eval(EvalArgs),
    /// Train, predict, post-process and score in one go.
    Run(RunArgs),
    /// Exertion classification over the subset x layer x feature grid.
    Exertion(ExertionArgs),
    /// Corpus statistics: exertion histogram, event counts and durations.
    Stats(StatsArgs),
    /// Frame-wise majority vote over annotator tracks.
    Merge(MergeArgs),
    /// HTTP backend for the annotation UI.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub n_recordings: usize,
    #[arg(long, default_value_t = 20)]
    pub n_subjects: usize,
    #[arg(long, default_value_t = 1000)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 1250)]
    pub max_frames: usize,
    /// Embedding layers to generate, e.g. `emb4,emb6,emb12`.
    #[arg(long, value_delimiter = ',')]
    pub embeddings: Vec<String>,
    /// Also write 16 kHz WAV audio.
    #[arg(long)]
    pub audio: bool,
    /// Class-separation margin in units of the noise level.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `mfb` or `mfcc`.
    #[arg(long, default_value = "mfb")]
    pub kind: String,
    /// Where to write the updated manifest (default: in place).
    #[arg(long)]
    pub out_manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub stride: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.15,0.15")]
    pub fractions: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage1Arg {
    Trained,
    Identity,
}

/// Pipeline configuration: a JSON file, then individual overrides.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Full pipeline configuration as JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub setup: Option<u8>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Acoustic feature (`mfb` or `mfcc`).
    #[arg(long)]
    pub feature: Option<String>,
    /// Embedding layer for setups 2 and 3 (`emb4`, `emb6`, `emb12`).
    #[arg(long)]
    pub embedding: Option<String>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seeds the split, model initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub stage1: Option<Stage1Arg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Output directory for checkpoints and `fitted.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PostprocArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output of `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output of `postproc`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Report JSON; a per-window CSV is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExertionModelArg {
    Recurrent,
    Pooled,
}

#[derive(Debug, Args)]
pub struct ExertionArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Full exertion configuration as JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// 2 (Low/High) or 5 (raw levels).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, value_enum)]
    pub model: Option<ExertionModelArg>,
    /// Embedding columns; `none` is acoustic only.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file from `split`; statistics are then grouped per split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub recording: String,
    /// Track files (`{"rate_hz":..,"labels":[..],"annotator":..}`).
    #[arg(required = true, num_args = 2..)]
    pub tracks: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Annotation store (default: `annotations/` under the data root).
    #[arg(long)]
    pub labels_dir: Option<PathBuf>,
}
