//! `planlens` command-line driver and read-only JSON service.

pub mod commands;
pub mod config;
pub mod service;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::PipelineConfig;

/// Exit code for a malformed command line or config file.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for missing, corrupt or unusable data.
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] planlens::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "planlens", version, about = "Contrastive sparse autoencoders over chess-agent rollouts")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline config (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every stage seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory
    #[arg(long, global = true, default_value = "planlens-out")]
    pub out: PathBuf,
    /// Worker threads; PLANLENS_THREADS takes precedence
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse PGN files into games.json
    Ingest {
        /// PGN files; defaults to dataset.pgn from the config
        pgn: Vec<PathBuf>,
    },
    /// Select root boards from games.json into roots.json
    Roots,
    /// Sample optimal and suboptimal trajectories for the roots into samples.json
    Sample {
        /// Only the first N roots
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run the agent along sampled trajectories and write the activation dataset
    Activations,
    /// Train a CSAE on the training split
    Train,
    /// Sanity metrics of a checkpoint on one split
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Train one model per sparsity weight and record l0 and R2
    Sweep {
        /// Comma-separated sparsity weights
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Play two move-selection strategies against each other
    Tournament {
        /// raw_q, policy, random or u:ALPHA,BETA,GAMMA
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
        #[arg(long)]
        games: Option<usize>,
    },
    /// Feature statistics, clustering, dendrogram and dictionary geometry
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// List square-specific and trajectory-specific features
    Flag {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Best-match top-k overlap between checkpoints, with a shuffled-sample control
    Compare {
        /// Checkpoints; the first is the reference
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Serve the analysis artifacts as JSON
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

fn init_logging(quiet: bool) {
    let level = if quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).try_init();
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let env = match std::env::var("PLANLENS_THREADS") {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| CliError::Usage(format!("PLANLENS_THREADS={v} is not a count")))?),
        Err(_) => None,
    };
    if let Some(n) = env.or(flag) {
        // Fails harmlessly if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Loads the config and applies the global overrides.
pub fn load_config(global: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

/// Parses `args` (program name first) and runs one subcommand, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    init_logging(cli.global.quiet);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    init_threads(cli.global.threads)?;
    let cfg = load_config(&cli.global)?;
    let ctx = commands::Context { cfg, out: cli.global.out.clone() };
    match &cli.command {
        Command::Ingest { pgn } => commands::ingest(&ctx, pgn),
        Command::Roots => commands::roots(&ctx),
        Command::Sample { limit } => commands::sample(&ctx, *limit),
        Command::Activations => commands::activations(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Evaluate { checkpoint, split } => commands::evaluate(&ctx, checkpoint.as_deref(), split.as_deref()),
        Command::Sweep { lambdas } => commands::sweep(&ctx, lambdas.as_deref()),
        Command::Tournament { a, b, games } => commands::tournament(&ctx, a.as_deref(), b.as_deref(), *games),
        Command::Analyze { checkpoint } => commands::analyze(&ctx, checkpoint.as_deref()),
        Command::Flag { checkpoint } => commands::flag(&ctx, checkpoint.as_deref()),
        Command::Compare { models, k } => commands::compare(&ctx, models, *k),
        Command::Serve { bind } => service::serve(&ctx, bind.as_deref()),
    }
}
