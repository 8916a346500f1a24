//! `hypercube`: build, query and evaluate a hypercube index.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 backend error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hypercube_rag::builder::BuildError;
use hypercube_rag::eval::EvalError;
use hypercube_rag::llm::LlmError;
use hypercube_rag::retrieval::RetrievalError;

use config::Backend;

#[derive(Debug, Parser)]
#[command(name = "hypercube", version, about = "Multi-dimensional label cube retrieval")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    /// Overrides the config's seed (clustering, benchmark sampling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More logging on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Table,
}

/// Retrieval settings shared by the query commands.
#[derive(Debug, Clone, Args)]
pub struct RetrievalArgs {
    /// Index directory (defaults to the config's `index_dir`).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Components as JSON: a list of {"dimension", "content"} objects, or a
    /// map from question text to such a list. Skips decomposition.
    #[arg(long)]
    pub components: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Semantic similarity threshold in [0, 1].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Exact matching only.
    #[arg(long)]
    pub no_semantic: bool,
    /// Embedding matching only.
    #[arg(long)]
    pub no_exact: bool,
    /// Ignore components on this dimension (repeatable).
    #[arg(long = "disable-dim", value_name = "DIMENSION")]
    pub disabled_dimensions: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract labels from a corpus and write an index directory.
    Build {
        /// Corpus JSONL ({"doc_id", "text"} per line).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Dimension schema; defaults to the config's `schema`.
        #[arg(long, conflicts_with = "discover")]
        schema: Option<PathBuf>,
        /// Discover dimensions from the corpus instead of reading a schema.
        #[arg(long)]
        discover: bool,
        /// Output directory (defaults to the config's `index_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Clusters for discovery.
        #[arg(long)]
        k: Option<usize>,
        /// Reuse discovery artifacts already in `<out>/discovery`.
        #[arg(long, requires = "discover")]
        resume: bool,
        /// Run on one thread.
        #[arg(long)]
        sequential: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Retrieve and rank documents for a query.
    Retrieve {
        query: Option<String>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Retrieve, then generate an answer grounded in the ranked documents.
    Answer {
        query: String,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Score retrieval (and optionally answers) against a QA set.
    Eval {
        /// QA JSONL ({"question", "answer", "gold_doc_ids"} per line).
        #[arg(long)]
        qa: PathBuf,
        /// Corpus for the baselines and gold-id checks; defaults to the
        /// config's `corpus`, then to the indexed documents.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Methods to run (repeatable); all three when omitted.
        #[arg(long = "method", value_parser = parse_method)]
        methods: Vec<hypercube_rag::eval::Method>,
        /// Also run the hypercube ablation variants.
        #[arg(long)]
        ablation: bool,
        /// Generate answers and score them (token F1, semantic score).
        #[arg(long)]
        answers: bool,
        /// Also ask the judge model; needs --answers.
        #[arg(long, requires = "answers")]
        judge: bool,
        /// Fail on records with an empty gold set instead of scoring recall 1.
        #[arg(long)]
        strict_gold: bool,
        /// Directory for one JSON report per run plus summary.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Per-query latency of each method on synthetic corpora.
    Bench {
        /// Corpus sizes (at least three).
        #[arg(long, value_delimiter = ',', default_values_t = [500, 1000, 2500, 5000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Write `method,corpus_size,median_ms` here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long = "method", value_parser = parse_method)]
        methods: Vec<hypercube_rag::eval::Method>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Evaluate the hypercube at each threshold in 0.5, 0.6, 0.7, 0.8, 0.9, 0.95.
    SweepTau {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

fn parse_method(s: &str) -> Result<hypercube_rag::eval::Method, String> {
    s.parse().map_err(|e: EvalError| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Backend(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    /// Classifies by the innermost library error in the chain.
    pub fn data(e: anyhow::Error) -> CliError {
        if is_backend(&e) {
            CliError::Backend(e)
        } else {
            CliError::Data(e)
        }
    }
}

fn is_backend(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        if let Some(r) = cause.downcast_ref::<RetrievalError>() {
            return matches!(r, RetrievalError::Decomposition(_) | RetrievalError::Embedding(_));
        }
        if let Some(ev) = cause.downcast_ref::<EvalError>() {
            return matches!(ev, EvalError::Llm(_) | EvalError::JudgeMalformed { .. });
        }
        if let Some(b) = cause.downcast_ref::<BuildError>() {
            return matches!(b, BuildError::Embedding(_) | BuildError::Prompt(_));
        }
        if let Some(l) = cause.downcast_ref::<LlmError>() {
            return !matches!(l, LlmError::MissingVariable(_) | LlmError::Config(_));
        }
        false
    })
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::data(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(e) => write!(f, "error: {e:#}"),
            CliError::Backend(e) => write!(f, "backend error: {e:#}"),
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_target(false).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
