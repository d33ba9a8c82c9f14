//! `reviewir` command line: argument parsing, dispatch and exit codes.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod report;

pub use report::{render_report, RunTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Default output directory when `--out` is absent.
pub const OUT_ENV: &str = "REVIEWIR_OUT";

#[derive(Debug, Parser)]
#[command(name = "reviewir", version, about = "Curriculum training and evaluation of a small all-in-one restoration network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic degraded/clean datasets and their manifest.
    Synth(SynthArgs),
    /// Entropy statistics, histogram CSV and the curriculum plan.
    Rank(RankArgs),
    /// Run the review-learning curriculum.
    Train(TrainArgs),
    /// Build a challenge archive for one dataset from a checkpoint.
    Harvest(HarvestArgs),
    /// Metrics of a checkpoint on test splits.
    Eval(EvalArgs),
    /// Restore one image.
    Infer(InferArgs),
    /// Stage x dataset metric tables from run directories.
    Report(ReportArgs),
    /// Write a default training config file.
    Init(InitArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory [env: REVIEWIR_OUT, default: reviewir-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutArg {
    pub fn resolve(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("reviewir-out"))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated degradations.
    #[arg(long, value_delimiter = ',', default_value = "blur,lowlight,rain,snow")]
    pub kinds: Vec<String>,
    /// Override a default strength, e.g. `rain=0.4`. Repeatable.
    #[arg(long = "strength", value_name = "KIND=S")]
    pub strengths: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub train: usize,
    #[arg(long, default_value_t = 3)]
    pub test: usize,
    /// Side of the square source textures.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Debug, Args, Clone, Copy, Default)]
pub struct HarvestFlags {
    /// Loss threshold multiplier of the first stage.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Entropy harvest share of later stages.
    #[arg(long)]
    pub top_fraction: Option<f64>,
    /// Review decay per stage.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Keep the top share by score at every stage instead; 0 disables review.
    #[arg(long)]
    pub review_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
    #[command(flatten)]
    pub harvest: HarvestFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Plan file from `rank`; ranked on the fly when absent.
    #[arg(long, conflicts_with = "resume")]
    pub plan: Option<PathBuf>,
    /// Training config from `init`.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Model preset: desk, full or tiny.
    #[arg(long, conflicts_with = "resume")]
    pub preset: Option<String>,
    #[arg(long, conflicts_with = "resume")]
    pub seed: Option<u64>,
    /// Multiplies every iteration budget.
    #[arg(long, conflicts_with = "resume")]
    pub scale: Option<f64>,
    /// entropy or random.
    #[arg(long, conflicts_with = "resume")]
    pub order: Option<String>,
    #[arg(long, conflicts_with = "resume")]
    pub crop: Option<usize>,
    #[command(flatten)]
    pub harvest: HarvestFlags,
    /// Write `iter-<n>.ck` every N iterations.
    #[arg(long, conflicts_with = "resume")]
    pub checkpoint_every: Option<usize>,
    /// Stop after this global iteration, leaving `iter-<n>.ck` behind.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Continue from a checkpoint; config and plan come from the file.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub dataset: String,
    /// loss or entropy.
    #[arg(long, default_value = "loss")]
    pub rule: String,
    /// Archive stage number written to the file.
    #[arg(long, default_value_t = 1)]
    pub stage: usize,
    #[command(flatten)]
    pub harvest: HarvestFlags,
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Evaluate one dataset instead of all.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output image; defaults to `<out dir>/<stem>_restored.png`.
    #[arg(long = "to")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] reviewir::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use reviewir::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(E::Numeric { .. }) => EXIT_NUMERIC,
            CliError::Lib(E::Config(_) | E::Contract(_)) => EXIT_USAGE,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Rank(a) => commands::rank(a),
        Command::Train(a) => commands::train(a),
        Command::Harvest(a) => commands::harvest(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Report(a) => commands::report(a),
        Command::Init(a) => commands::init(a),
    }
}
