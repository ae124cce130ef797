use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "atk", version, about = "Train, distill and inspect CNNs with attention transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from scratch (plain cross-entropy).
    TrainTeacher(TrainTeacherArgs),
    /// Train a student against a teacher checkpoint, or with a gradient regularizer.
    Distill(DistillArgs),
    /// Report the test error of a checkpoint.
    Eval(EvalArgs),
    /// Write attention maps of a checkpoint as PGM images and raw ATMP files.
    ExportAttention(ExportArgs),
    /// Run the numerical self-checks in double precision.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// cifar10:PATH, mnist:PATH or synth
    #[arg(long, default_value = "synth")]
    pub data: String,
    /// Class-stratified training subset size (synth: number of generated images).
    #[arg(long)]
    pub subset: Option<usize>,
    /// Class-stratified test subset size.
    #[arg(long)]
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate; decays ×0.2 at 60% and 80% of training.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory (default: runs/<command>-<arch>-s<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replay the run described by a manifest.json; other flags except --out are ignored.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Print the architecture's transfer-point names and exit.
    #[arg(long)]
    pub list_taps: bool,
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    /// nin-thin, nin-wide, wrn-D-K, optionally with /bn=0, /relupool=0, ...
    #[arg(long, default_value = "wrn-16-2")]
    pub arch: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Student architecture.
    #[arg(long, default_value = "wrn-16-1")]
    pub arch: String,
    #[command(flatten)]
    pub run: RunArgs,
    /// Teacher checkpoint (not needed for symmetry and min-l2).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// at, kd, at+kd, grad-at, symmetry, min-l2 or factt
    #[arg(long)]
    pub mode: Option<String>,
    /// Attention mapping: sum1, sum2, sum4, max1, ...
    #[arg(long, default_value = "sum2")]
    pub mapping: String,
    /// Map normalization: l2 or l1.
    #[arg(long, default_value = "l2")]
    pub norm: String,
    /// auto, one value, or one value per pair (comma separated).
    #[arg(long, default_value = "auto")]
    pub beta: String,
    /// none or linear
    #[arg(long, default_value = "none")]
    pub beta_decay: String,
    /// Distillation temperature.
    #[arg(long = "T", default_value_t = 4.0)]
    pub temperature: f64,
    /// Weight of the distillation term.
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Transfer points: `tap` or `student_tap:teacher_tap`, comma separated
    /// (default: every tap name both networks share).
    #[arg(long)]
    pub pairs: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Test-split image indices, comma separated.
    #[arg(long, default_value = "0,1,2,3")]
    pub images: String,
    /// Taps to export, comma separated (default: all).
    #[arg(long)]
    pub taps: Option<String>,
    #[arg(long, default_value = "sum2")]
    pub mapping: String,
    /// Overrides the exponent of --mapping.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value = "attention")]
    pub out: PathBuf,
    /// Print the checkpoint's transfer-point names and exit.
    #[arg(long)]
    pub list_taps: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inject a known bug to confirm the checks catch it.
    #[arg(long, value_enum, hide = true)]
    pub fault: Option<FaultArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    ConvBackward,
}
