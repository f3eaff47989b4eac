//! Command-line driver: preprocess, oracle, train, parse and evaluate.
//!
//! Every subcommand writes into its own run directory (`--out`): the
//! artifacts, a `config.resolved` snapshot of the effective settings and a
//! `manifest.json` listing each artifact with its SHA-256.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("internal error: {0:#}")]
    Internal(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

pub fn data(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(e.into())
}

pub fn internal(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Internal(e.into())
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "amrberger", version, about = "Transition-based AMR parser")]
#[serde(rename_all = "kebab-case")]
pub struct Cli {
    /// key=value settings; keys are long flag names, optionally prefixed
    /// with a subcommand (`train.epochs=5`). Flags on the command line win.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for per-sentence work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Leave the dependency fields of every feature vector at zero.
    #[arg(long, global = true)]
    pub no_dependency_features: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Join an AMR bank with CoNLL-U annotations and alignments.
    Preprocess(PreprocessArgs),
    /// Run the oracle and write training samples for the three classifiers.
    Oracle(OracleArgs),
    /// Train classifiers on oracle samples.
    Train(TrainArgs),
    /// Parse CoNLL-U sentences into AMR graphs.
    Parse(ParseArgs),
    /// Score predicted graphs against gold graphs.
    Evaluate(EvaluateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::Oracle(_) => "oracle",
            Command::Train(_) => "train",
            Command::Parse(_) => "parse",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PreprocessArgs {
    /// AMR bank with `# ::id` headers.
    #[arg(long)]
    pub amr: PathBuf,
    /// CoNLL-U annotations keyed by `# sent_id`.
    #[arg(long)]
    pub conllu: PathBuf,
    /// Tab-separated `id<TAB>jamr alignment` lines; overrides `::alignments`.
    #[arg(long, conflicts_with = "heuristic_alignments")]
    pub alignments: Option<PathBuf>,
    /// Ignore `::alignments` and align every sentence with the rule-based aligner.
    #[arg(long)]
    pub heuristic_alignments: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WordVectors {
    Static,
    Contextual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    Dense,
    Indexed,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EmbeddingArgs {
    /// Word vectors for the word slots.
    #[arg(long, value_enum, default_value_t = WordVectors::Static)]
    pub embeddings: WordVectors,
    /// Static vector table (GloVe text format).
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Contextual vectors in the AMRE format.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Zero the concept vector slots.
    #[arg(long)]
    pub no_concept_embeddings: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct OracleArgs {
    /// Archive written by `preprocess`.
    #[arg(long)]
    pub archive: PathBuf,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    /// Store static word slots as table row ids instead of vectors.
    #[arg(long, value_enum, default_value_t = Encoding::Dense)]
    pub encoding: Encoding,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    Transition,
    Label,
    Reentrancy,
    All,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Output directory of `oracle` on the training split.
    #[arg(long)]
    pub samples: PathBuf,
    /// Output directory of `oracle` on the dev split.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Which::All)]
    pub classifier: Which,
    /// Static table used to expand indexed samples.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Random search with this many trials (needs --dev).
    #[arg(long)]
    pub search: Option<usize>,
    #[arg(long, default_value_t = 6)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = 768)]
    pub hidden_width: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ParseArgs {
    /// Output directory of `train` holding all three models.
    #[arg(long)]
    pub models: PathBuf,
    /// Concept table written by `preprocess`.
    #[arg(long)]
    pub concepts: PathBuf,
    /// CoNLL-U sentences to parse.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    /// Create a reentrant edge when its probability reaches this.
    #[arg(long, default_value_t = amrberger::parser::DEFAULT_REENTRANCY_THRESHOLD)]
    pub reentrancy_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateArgs {
    /// Predicted AMR bank.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold AMR bank.
    #[arg(long)]
    pub gold: PathBuf,
    /// Comma-separated metric names; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    #[arg(long, default_value_t = amrberger::smatch::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| commands::run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => fail(&e),
        Err(_) => ExitCode::from(3),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.code())
}
