//! `toxbuster` — train, run and audit a real-time toxic-chat detector.
//!
//! Exit codes: 0 success, 2 configuration or malformed input, 3 stream
//! ordering violation, 4 I/O failure.

mod commands;
mod config;
mod error;
mod stream;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "toxbuster", version, about = "Toxic-span detection for in-game chat")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed from a TOML config file
    Train(TrainArgs),
    /// Score a JSONL chat stream, one output record per line
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a labeled corpus
    Eval(EvalArgs),
    /// Convert an external corpus into the chat-line JSONL format
    Adapt(AdaptArgs),
    /// Generate a synthetic labeled corpus
    Synth(SynthArgs),
    /// Cross-reference flagged players with report sets
    Moderate(ModerateArgs),
    /// Evaluate each checkpoint on each corpus (binary F1 matrix)
    Transfer(TransferArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration ([model], [train], [context], [paths])
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed list, e.g. --seeds 1,2,3
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct SessionShape {
    /// Teams per match in the corpus file
    #[arg(long, default_value_t = 2)]
    num_teams: usize,
    /// Players per team; 0 means unbounded (single-team threads)
    #[arg(long, default_value_t = 5)]
    team_size: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input JSONL stream; - for stdin
    #[arg(long, default_value = "-")]
    input: String,
    /// Output JSONL stream; - for stdout
    #[arg(long, default_value = "-")]
    output: String,
    /// Override the history scope baked into the checkpoint
    #[arg(long)]
    scope: Option<String>,
    /// Drop a match after this many input records without a line for
    /// it; 0 keeps every match until its end_of_match record
    #[arg(long, default_value_t = 100_000)]
    idle_records: u64,
    #[command(flatten)]
    shape: SessionShape,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for metrics.json, pr_curve.csv, operating_points.json
    /// and history_bins.json
    #[arg(long, default_value = "eval-out")]
    out_dir: PathBuf,
    /// Override the history scope baked into the checkpoint
    #[arg(long)]
    scope: Option<String>,
    /// Precision floors for the calibrated operating points
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.99, 0.999])]
    precision: Vec<f64>,
    #[command(flatten)]
    shape: SessionShape,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(subcommand)]
    source: AdaptSource,
}

#[derive(Subcommand)]
enum AdaptSource {
    /// Merged-sentence JSONL from the public Dota 2 chat corpus
    Dota(AdaptIo),
    /// Civil-Comments-style CSV of threaded comments
    Cc(AdaptIo),
}

#[derive(Args)]
struct AdaptIo {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Lowercase text when expanding word-level labels to sub-tokens
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    lowercase: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// keyword, context or identity
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 48)]
    matches: usize,
    #[arg(long, default_value_t = 10)]
    lines_per_match: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Toxic trigger words (keyword preset only)
    #[arg(long, value_delimiter = ',')]
    triggers: Option<Vec<String>>,
    /// Benign filler words (keyword preset only)
    #[arg(long, value_delimiter = ',')]
    benign: Option<Vec<String>>,
}

#[derive(Args)]
struct ModerateArgs {
    /// JSONL of scored lines as cmd `predict` emits them
    #[arg(long)]
    predictions: PathBuf,
    /// The corpus the predictions refer to (supplies rosters)
    #[arg(long)]
    corpus: PathBuf,
    /// JSON file {"players": [...], "chat_reported": [...], "reported": [...]}
    #[arg(long)]
    report_sets: PathBuf,
    /// Precision levels to report at, resolved via --calibration
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.99, 0.999])]
    precision: Vec<f64>,
    /// operating_points.json written by `eval`
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Skip calibration and flag at these raw score thresholds
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Proactive-candidate floor on flagged lines per match
    #[arg(long, default_value_t = 5.0)]
    min_avg_flagged: f64,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    shape: SessionShape,
}

#[derive(Args)]
struct TransferArgs {
    /// NAME=CHECKPOINT, repeatable
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    /// NAME=CORPUS, repeatable
    #[arg(long = "corpus", required = true)]
    corpora: Vec<String>,
    /// Write the matrix as JSON here as well
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    shape: SessionShape,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::cmd_train(&args.config, args.seeds),
        Command::Predict(args) => commands::cmd_predict(
            &args.checkpoint,
            &args.input,
            &args.output,
            args.scope.as_deref(),
            args.idle_records,
            args.shape.num_teams,
            args.shape.team_size,
        ),
        Command::Eval(args) => commands::cmd_eval(
            &args.checkpoint,
            &args.corpus,
            &args.out_dir,
            args.scope.as_deref(),
            &args.precision,
            args.shape.num_teams,
            args.shape.team_size,
        ),
        Command::Adapt(args) => match args.source {
            AdaptSource::Dota(io) => commands::cmd_adapt_dota(&io.input, &io.output, io.lowercase),
            AdaptSource::Cc(io) => commands::cmd_adapt_cc(&io.input, &io.output, io.lowercase),
        },
        Command::Synth(args) => commands::cmd_synth(
            &args.preset,
            args.matches,
            args.lines_per_match,
            args.seed,
            &args.output,
            args.triggers,
            args.benign,
        ),
        Command::Moderate(args) => commands::cmd_moderate(
            &args.predictions,
            &args.corpus,
            &args.report_sets,
            &args.precision,
            args.calibration.as_deref(),
            args.thresholds,
            args.min_avg_flagged,
            args.output.as_deref(),
            args.shape.num_teams,
            args.shape.team_size,
        ),
        Command::Transfer(args) => commands::cmd_transfer(
            &args.models,
            &args.corpora,
            args.output.as_deref(),
            args.shape.num_teams,
            args.shape.team_size,
        ),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
