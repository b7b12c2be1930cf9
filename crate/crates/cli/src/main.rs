//! `dvc`: every pipeline stage of the toolkit as a subcommand.
//!
//! Exit codes: 0 on success, 1 on invalid flags or input contents, 2 when a
//! file cannot be read, written or decoded.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dvc", version, about = "Dense video captioning toolkit")]
struct Cli {
    /// Worker threads for per-video parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select proposals with the fused pointwise/sequential inference.
    Fuse(FuseArgs),
    /// Proposal precision and recall at tIoU thresholds.
    EvalProposals(EvalProposalsArgs),
    /// Dense captioning scores (BLEU-4, CIDEr-D) at tIoU thresholds.
    EvalCaptions(EvalCaptionsArgs),
    /// Self-BLEU and n-gram repetition of predicted captions.
    EvalDiversity(EvalDiversityArgs),
    /// Re-rank candidate proposals by weighted normalised factors.
    RerankProposals(RerankProposalsArgs),
    /// Pick one caption per proposal from several hypotheses.
    RerankCaptions(RerankCaptionsArgs),
    /// Label predicted proposals with their best-matching groundtruth caption.
    Augment(AugmentArgs),
    /// Train or apply the segment-level concept predictor.
    Concepts {
        #[command(subcommand)]
        action: ConceptsCommand,
    },
    /// Local, global and neighbouring-event context for every event.
    Contexts(ContextsArgs),
    /// Write a seeded synthetic corpus.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Metadata sidecar with per-video durations.
    #[arg(long)]
    meta: PathBuf,
    /// Scorer specification: precomputed tables or heuristic attractors.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 80)]
    cap: usize,
    #[arg(long, default_value_t = 20)]
    max_steps: usize,
    /// Predictions file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalProposalsArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Groundtruth file; repeat to evaluate against the union of several sets.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long = "tiou", value_delimiter = ',', default_values_t = [0.3, 0.5, 0.7, 0.9])]
    thresholds: Vec<f64>,
    /// JSON report to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalCaptionsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long = "tiou", value_delimiter = ',', default_values_t = [0.3, 0.5, 0.7, 0.9])]
    thresholds: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalDiversityArgs {
    /// Predictions file with sentences; a second file adds a second set.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// n-gram order for repetition.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RerankProposalsArgs {
    /// Candidates with proposal_score (and optionally caption_logprob).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long, default_value_t = 1.0)]
    w_quality: f64,
    #[arg(long, default_value_t = 1.0)]
    w_describability: f64,
    #[arg(long, default_value_t = 1.0)]
    w_position: f64,
    #[arg(long, default_value_t = 1.0)]
    w_length: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RerankCaptionsArgs {
    /// Per-proposal caption hypotheses.
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 20)]
    top_concepts: usize,
    #[arg(long, default_value_t = 20)]
    segments: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ConceptsCommand {
    /// Fit the predictor on groundtruth events.
    Train(ConceptsTrainArgs),
    /// Concept probabilities for every predicted proposal.
    Predict(ConceptsPredictArgs),
}

#[derive(Debug, Args)]
struct ConceptsTrainArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// JSON list of candidate concept words (nouns and verbs).
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    segments: usize,
    /// Write the structured-text model instead of the binary one.
    #[arg(long)]
    text: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss trace (JSON).
    #[arg(long)]
    loss_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConceptsPredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = 20)]
    segments: usize,
    /// Concepts listed per proposal.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    Uni,
    Bi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolArg {
    Mean,
    Max,
}

#[derive(Debug, Args)]
struct ContextsArgs {
    /// Events to describe: a predictions file (with --meta) or a groundtruth file.
    #[arg(long, conflicts_with = "gt", required_unless_present = "gt")]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Feature directory; enables pooled context vectors.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, value_enum, default_value_t = DirectionArg::Bi)]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = PoolArg::Mean)]
    pool: PoolArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 50)]
    videos: usize,
    #[arg(long, default_value_t = 2)]
    events_min: usize,
    #[arg(long, default_value_t = 5)]
    events_max: usize,
    /// Skip the jittered, paraphrased second annotation set.
    #[arg(long)]
    single_set: bool,
    /// Feature dimension; 0 writes no features.
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Exit code for a failed run: 2 for file access and decoding, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dvc_core::Error>() {
            return match e {
                dvc_core::Error::Io { .. } | dvc_core::Error::Parse { .. } | dvc_core::Error::Format { .. } => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// The error chain on one line, skipping causes a message already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
