//! `clip`: generate synthetic crowds, score, train, evaluate and compare runs.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod commands;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clip_core::{PacingKind, PrunePolicy};

#[derive(Debug, Parser)]
#[command(
    name = "clip",
    version,
    about = "Curriculum learning with iterative data pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset
    Gen(GenArgs),
    /// Pretrain a scorer and write per-sample difficulty scores
    Score(ScoreArgs),
    /// Train under the standard or CLIP schedule
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Compare run logs: merged table, threshold crossing, SVG chart
    Report(ReportArgs),
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} must be positive")),
        Err(e) => Err(e.to_string()),
    }
}

fn epsilon(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(v),
        Ok(v) => Err(format!("epsilon must satisfy 0 <= epsilon < 1, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn start_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        Ok(v) => Err(format!("b0 must satisfy 0 < b0 <= 1, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = positive_usize)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub count_min: usize,
    #[arg(long, default_value_t = 30)]
    pub count_max: usize,
    /// Ground-truth Gaussian bandwidth in pixels
    #[arg(long, default_value_t = 2.0, value_parser = positive_f64)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Manifest file or the directory containing manifest.json
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = clip_core::curriculum::DEFAULT_SCORER_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Standard,
    Clip,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PacingArg {
    Linear,
    Quadratic,
}

impl From<PacingArg> for PacingKind {
    fn from(p: PacingArg) -> Self {
        match p {
            PacingArg::Linear => PacingKind::Linear,
            PacingArg::Quadratic => PacingKind::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PruneArg {
    #[value(name = "prefix_truncate", alias = "prefix-truncate")]
    PrefixTruncate,
    #[value(name = "prune_easiest", alias = "prune-easiest")]
    PruneEasiest,
}

impl From<PruneArg> for PrunePolicy {
    fn from(p: PruneArg) -> Self {
        match p {
            PruneArg::PrefixTruncate => PrunePolicy::PrefixTruncate,
            PruneArg::PruneEasiest => PrunePolicy::PruneEasiest,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Score file from `clip score`; required for the clip strategy
    #[arg(long, required_if_eq("strategy", "clip"))]
    pub scores: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    #[arg(long, value_enum, default_value = "quadratic")]
    pub pacing: PacingArg,
    #[arg(long, default_value_t = 0.2, value_parser = start_fraction)]
    pub b0: f64,
    #[arg(long, default_value_t = 10, value_parser = positive_usize)]
    pub stages: usize,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub epochs_per_stage: usize,
    /// Epochs for the standard strategy; defaults to stages x epochs-per-stage
    #[arg(long, value_parser = positive_usize)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0.05, value_parser = epsilon)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "prefix_truncate")]
    pub prune_policy: PruneArg,
    #[arg(long, default_value_t = clip_core::curriculum::DEFAULT_BATCH_SIZE, value_parser = positive_usize)]
    pub batch_size: usize,
    #[arg(long, default_value_t = clip_core::model::DEFAULT_LR, value_parser = positive_f64)]
    pub lr: f64,
    /// Disable flip and brightness/contrast augmentation
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds, trained as independent concurrent jobs
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub seeds: Vec<u64>,
    /// Output directory for run logs, checkpoints and plan dumps
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub split: Split,
    #[arg(long, default_value_t = 2)]
    pub game_level: u32,
    /// Score the checkpoint against its own predictions (harness self-check)
    #[arg(long)]
    pub self_check: bool,
    /// Report path; defaults to <checkpoint>.metrics.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub loss_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLIP_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Gen(a) => commands::cmd_gen(&a),
        Command::Score(a) => commands::cmd_score(&a),
        Command::Train(a) => commands::cmd_train(&a),
        Command::Eval(a) => commands::cmd_eval(&a),
        Command::Report(a) => commands::cmd_report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<commands::UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
