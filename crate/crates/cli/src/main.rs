mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use url::Url;

/// Knowledge-graph question answering with path filtering and answer
/// integration.
#[derive(Debug, Parser)]
#[command(name = "kgrag", version)]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline over a dataset and write a run directory.
    Run(Box<RunArgs>),
    /// Score a predictions file against a dataset.
    Eval(EvalArgs),
    /// Compare runs or inspect audit files.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Write retrieved paths with injected noise paths as JSONL.
    Noise(NoiseArgs),
    /// Serve a mock fixture over the adapter wire protocol.
    ServeMock(ServeMockArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run config (TOML).
    config: PathBuf,
    /// Skip questions already recorded by an interrupted run.
    #[arg(long)]
    resume: bool,
    /// Bearer token for the HTTP adapter.
    #[arg(long, env = "KGRAG_ADAPTER_TOKEN", hide_env_values = true)]
    adapter_token: Option<String>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags that override single config keys.
#[derive(Debug, Default, Args)]
struct Overrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    max_hops: Option<usize>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long, value_enum)]
    scorer: Option<Scorer>,
    #[arg(long, value_enum)]
    coarse_mode: Option<CoarseModeArg>,
    /// Paths kept by the top-k coarse filter.
    #[arg(long)]
    k: Option<usize>,
    /// Score threshold of the absolute coarse filter.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    no_coarse: bool,
    #[arg(long)]
    no_fine: bool,
    #[arg(long)]
    no_integration: bool,
    #[arg(long)]
    tau_g: Option<f64>,
    #[arg(long)]
    tau_l: Option<f64>,
    /// Switch to the HTTP adapter at this base URL.
    #[arg(long)]
    adapter_url: Option<Url>,
    /// Inject this many noise paths per question.
    #[arg(long)]
    noise: Option<usize>,
    #[arg(long)]
    noise_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scorer {
    Attention,
    Similarity,
    Pagerank,
    External,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CoarseModeArg {
    TopK,
    Absolute,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Break questions down by which of two runs scored better.
    Categories {
        #[arg(long)]
        dataset: PathBuf,
        /// Predictions with retrieval.
        #[arg(long)]
        rag: PathBuf,
        /// Predictions from the model alone.
        #[arg(long)]
        llm_only: PathBuf,
    },
    /// Mean F1 by number of retrieved paths, binned and smoothed.
    PathCount {
        audit: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long, default_value_t = 3)]
        window: usize,
    },
    /// Mean path score for paths with and without a gold answer.
    Attention { audit: PathBuf },
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Run config supplying graph, dataset, and retrieval settings.
    config: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    n_noise: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeMockArgs {
    /// Mock fixture (JSON).
    fixture: PathBuf,
    /// Dataset used to key fixture entries by question id.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8089")]
    addr: SocketAddr,
    /// Require this bearer token on every request.
    #[arg(long, env = "KGRAG_ADAPTER_TOKEN", hide_env_values = true)]
    auth_token: Option<String>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Run(args) => commands::run(*args),
        Command::Eval(args) => commands::eval(args),
        Command::Analyze(cmd) => commands::analyze(cmd),
        Command::Noise(args) => commands::noise(args),
        Command::ServeMock(args) => commands::serve_mock(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
