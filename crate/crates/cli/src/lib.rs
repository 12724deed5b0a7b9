//! Command-line surface of the epigeom engine.
//!
//! Every command reads its tunables from an optional JSON [`RunConfig`],
//! takes all randomness from `--seed` and writes deterministic JSON.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "epigeom", version, about = "Epipolar-weighted depth and ego-motion geometry")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Camera intrinsics: `fx fy cx cy [skew]` or nine row-major numbers.
    #[arg(long, global = true)]
    pub intrinsics: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Robust essential matrix and relative pose from a matches CSV.
    EstimateEssential(EstimateArgs),
    /// Per-term loss maps for a target view and its sources.
    LossMap(LossMapArgs),
    /// Depth error and accuracy metrics.
    EvalDepth(EvalDepthArgs),
    /// ATE and ATDE over sliding trajectory snippets.
    EvalPose(EvalPoseArgs),
    /// Render a synthetic view pair with ground truth.
    Synth(SynthArgs),
    /// Direct depth and pose refinement on the total loss.
    Refine(RefineArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub matches: PathBuf,
    /// Intrinsics of the second view when they differ from the first.
    #[arg(long)]
    pub intrinsics2: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossMapArgs {
    #[arg(long)]
    pub target: PathBuf,
    /// Source views; repeat for several.
    #[arg(long, required = true)]
    pub source: Vec<PathBuf>,
    /// Target depth (16-bit PNG with sidecar, or PFM).
    #[arg(long)]
    pub depth: PathBuf,
    /// Target-to-source poses, one KITTI line per source.
    #[arg(long)]
    pub poses: PathBuf,
    /// Matches per source; the essential matrix is then estimated instead
    /// of derived from the poses.
    #[arg(long)]
    pub matches: Vec<PathBuf>,
    /// Disable epipolar weighting.
    #[arg(long)]
    pub no_epipolar: bool,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    /// Predicted depth maps; repeat in the same order as `--gt`.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// Depth cap in metres (80 and 50 are the standard protocols).
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub no_median_scaling: bool,
}

#[derive(Debug, Args)]
pub struct EvalPoseArgs {
    /// Predicted camera-to-world poses (KITTI layout).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Frames per snippet.
    #[arg(long)]
    pub snippet: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description; a random static scene is generated when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Add a moving box to a generated scene.
    #[arg(long)]
    pub moving: bool,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, required = true)]
    pub source: Vec<PathBuf>,
    /// Initial target-to-source poses (KITTI layout, one per source).
    #[arg(long, conflicts_with = "matches")]
    pub pose: Option<PathBuf>,
    /// Matches per source for a five-point initialization.
    #[arg(long)]
    pub matches: Vec<PathBuf>,
    /// Initial depth; unit inverse depth when omitted.
    #[arg(long)]
    pub init_depth: Option<PathBuf>,
    /// True target-to-source poses, for per-iteration pose errors.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = RunConfig::load(cli.common.config.as_deref())?.with_seed(cli.common.seed);
    let c = &cli.common;
    match &cli.command {
        Command::EstimateEssential(a) => commands::estimate_essential(c, &cfg, a),
        Command::LossMap(a) => commands::loss_map(c, &cfg, a),
        Command::EvalDepth(a) => commands::eval_depth(c, &cfg, a),
        Command::EvalPose(a) => commands::eval_pose(c, &cfg, a),
        Command::Synth(a) => commands::synth(c, &cfg, a),
        Command::Refine(a) => commands::refine(c, &cfg, a),
    }
}
