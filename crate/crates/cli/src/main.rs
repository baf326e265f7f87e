//! `stylecav` command-line pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stylecav::cluster::Linkage;
use stylecav::taskgen::SplitName;
use stylecav::training::LossKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(
    std::io::Error,
    serde_json::Error,
    stylecav::CorpusError,
    stylecav::taskgen::TaskGenError,
    stylecav::encoder::EncoderError,
    stylecav::eval::EvalError,
    stylecav::training::TrainError,
    stylecav::stel::StelError,
    stylecav::cluster::ClusterError
);

#[derive(Debug, Parser)]
#[command(name = "stylecav", version, about = "Content-controlled authorship verification pipeline")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted author styles.
    Synth(SynthArgs),
    /// Convert a ConvoKit utterances.jsonl into the corpus format.
    Convert(ConvertArgs),
    /// Drop empty or deleted utterances and optionally select conversations.
    Filter(FilterArgs),
    /// Split authors into train/dev/test.
    Split(SplitArgs),
    /// Sample CAV tasks for one split at one or all content-control levels.
    GenTasks(GenTasksArgs),
    /// Summary statistics for task files.
    Stats(StatsArgs),
    /// Train an encoder and write a run directory.
    Train(TrainArgs),
    /// AUC and CAV accuracy of one or more models on CC test sets.
    Eval(EvalArgs),
    /// STEL accuracy per dimension.
    Stel(StelArgs),
    /// STEL-Or-Content accuracy per dimension.
    OrContent(OrContentArgs),
    /// Cluster utterance embeddings and measure cohesion.
    Cluster(ClusterArgs),
    /// Markdown report with SVG charts from the artifacts in a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub authors: usize,
    #[arg(long, default_value_t = 12)]
    pub per_author: usize,
    /// Shared style profiles (default: one per author).
    #[arg(long)]
    pub styles: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub consistency: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Domain used when an utterance has no `meta.subreddit`.
    #[arg(long, default_value = "unknown")]
    pub domain: String,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Keep only conversations with at least this many valid utterances.
    #[arg(long)]
    pub min_posts: Option<usize>,
    /// Sample at most this many qualifying conversations per domain.
    #[arg(long)]
    pub per_domain: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenTasksArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Author split JSON; computed from the seed and ratios when absent.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<SplitName>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
    /// conversation, domain, random, or all (shares anchor pairs).
    #[arg(long)]
    pub cc: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub tasks: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub train_tasks: Option<PathBuf>,
    #[arg(long)]
    pub dev_tasks: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d_embed: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub hash_dim: Option<usize>,
    /// Use only hashed character n-grams.
    #[arg(long)]
    pub no_explicit: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Model JSON files.
    #[arg(long, num_args = 1..)]
    pub model: Vec<PathBuf>,
    /// Precomputed embedding TSVs (id, then vector components).
    #[arg(long, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    /// Also score an untrained random projection built from the seed.
    #[arg(long)]
    pub untrained: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Task TSVs, one per CC level.
    #[arg(long, num_args = 1..)]
    pub tasks: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StelArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stel: Option<PathBuf>,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OrContentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stel: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the transformed instances as TSV.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Second model; writes the ids each model alone gets right as JSON.
    #[arg(long, requires = "disagreements")]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub disagreements: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of clusters; defaults to the sweep's best k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Sweep these k values.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    /// Sweep the 2..26, 30, 40, 50, 100, 150, 200 grid.
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub linkage: Option<Linkage>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => config::RunConfig::load(path)?,
        None => config::RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Convert(a) => commands::convert(a),
        Command::Filter(a) => commands::filter(&cfg, a),
        Command::Split(a) => commands::split(&cfg, a),
        Command::GenTasks(a) => commands::gen_tasks(&cfg, a),
        Command::Stats(a) => commands::stats(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Stel(a) => commands::stel(&cfg, a),
        Command::OrContent(a) => commands::or_content(&cfg, a),
        Command::Cluster(a) => commands::cluster(&cfg, a),
        Command::Report(a) => report::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // --help and --version are not errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
