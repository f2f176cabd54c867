mod commands;
mod config;
mod transcript;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use unroll_core::microworld::scene::Difficulty;
use unroll_core::policy::BudgetPolicy;
use unroll_core::primitives::NoiseSpec;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "unroll", version, about = "Generate suites, run unroll pipelines and ablations, inspect traces")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a task suite file.
    Suite(SuiteArgs),
    /// Run pipelines on a suite, writing one trace and one answer per task.
    Run(RunArgs),
    /// Run pipelines on a suite and write the metric report.
    Ablate(RunArgs),
    /// Print a trace as a step-by-step transcript.
    Trace {
        file: PathBuf,
    },
    /// Verify a trace and rebuild its workspace from the recorded items.
    Replay {
        file: PathBuf,
        /// Also re-run the primitives and compare against the trace.
        #[arg(long)]
        reexecute: bool,
        /// Config supplying noise settings and remote primitives for re-execution.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Probe remote endpoints.
    Health(HealthArgs),
}

#[derive(Debug, Args)]
struct SuiteArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: unroll_core::evalharness::SuiteKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the standard size for the kind.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_parser = parse_difficulty, default_value = "medium")]
    difficulty: Difficulty,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Suite file written by `unroll suite`; otherwise the config's suite spec.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pipeline names, comma separated or repeated.
    #[arg(long = "pipeline", short, value_delimiter = ',')]
    pipelines: Vec<String>,
    /// Run only the first N tasks.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_budget_policy)]
    on_budget_exceeded: Option<BudgetPolicy>,
    /// Noise override, e.g. `estimate_pose=gaussian:0.05:7`.
    #[arg(long, value_parser = config::parse_noise)]
    noise: Vec<(String, NoiseSpec)>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HealthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    url: Option<String>,
    #[arg(long, default_value_t = 2000)]
    timeout_ms: u64,
}

fn parse_kind(s: &str) -> Result<unroll_core::evalharness::SuiteKind, String> {
    unroll_core::evalharness::SuiteKind::parse(s)
        .ok_or_else(|| format!("unknown kind {s:?}; expected spatial, depth, counting or generation"))
}

fn parse_difficulty(s: &str) -> Result<Difficulty, String> {
    Difficulty::parse(s).ok_or_else(|| format!("unknown difficulty {s:?}; expected easy, medium or hard"))
}

fn parse_budget_policy(s: &str) -> Result<BudgetPolicy, String> {
    BudgetPolicy::parse(s).ok_or_else(|| format!("unknown budget policy {s:?}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Suite(a) => commands::suite(a),
        Command::Run(a) => commands::run(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Trace { file } => commands::trace(&file),
        Command::Replay { file, reexecute, config } => commands::replay(&file, reexecute, config),
        Command::Health(a) => commands::health(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
