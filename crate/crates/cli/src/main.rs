//! `multifuse`: synthetic cohorts, training, evaluation, cross-validation,
//! ablation suites and gradient self-checks.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use exit::CliError;

#[derive(Parser, Debug)]
#[command(name = "multifuse", version, about = "Multimodal depression-severity classification toolkit")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort.
    Synth(SynthArgs),
    /// Train a model on a dataset split by speaker.
    Train(TrainArgs),
    /// Re-score a trained run on a split of its dataset.
    Eval(EvalArgs),
    /// Speaker-independent k-fold cross-validation.
    Cv(CvArgs),
    /// Run an ablation suite on one shared split.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients of a tiny fusion model.
    Gradcheck(GradcheckArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Gbt,
    Fusenet,
    LlmToy,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Dev,
    All,
}

#[derive(Args, Debug)]
pub struct SeedArg {
    /// Seed for every random stream of the run.
    #[arg(long, env = "MULTIFUSE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    track: String,
    #[arg(long)]
    task: String,
    /// Number of samples (default: the reference cohort size).
    #[arg(long)]
    n: Option<usize>,
    /// Distance between adjacent class means.
    #[arg(long)]
    delta: Option<f64>,
    /// Standard deviation of per-speaker offsets.
    #[arg(long)]
    speaker_effect: Option<f64>,
    /// Window length in seconds (1 or 5).
    #[arg(long)]
    window: Option<u32>,
    /// Audio feature kind (mfcc, opensmile, wav2vec2).
    #[arg(long)]
    audio: Option<String>,
    /// Visual feature kind (densenet, resnet, openface).
    #[arg(long)]
    visual: Option<String>,
    /// Inclusive frame-count range, e.g. `8..30`.
    #[arg(long)]
    frames: Option<String>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set booster.rounds=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(value_enum)]
    model: ModelKind,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Task to train (default: the dataset's first task).
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    dev_fraction: f64,
    /// Training stages for llm-toy: none, one or both.
    #[arg(long)]
    stages: Option<String>,
    #[command(flatten)]
    seed: SeedArg,
    /// Validate inputs and configuration without writing anything.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    run: PathBuf,
    /// Dataset to score (default: the one the run was trained on).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitPart::Dev)]
    split: SplitPart,
    /// Directory for metrics and confusion files (default: print only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(value_enum)]
    model: ModelKind,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Suite file.
    #[arg(long)]
    suite: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Parameter entries to compare.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Scale the largest checked gradient by 1 + FACTOR (sensitivity control).
    #[arg(long, value_name = "FACTOR")]
    corrupt: Option<f64>,
    #[command(flatten)]
    seed: SeedArg,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cv(a) => commands::cv(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
