//! `easyrl`: train, test and serve reinforcement-learning sessions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for a run that started but did not succeed.
const EXIT_RUN_FAILED: u8 = 1;
/// Exit status for bad arguments or configuration.
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "easyrl",
    version,
    about = "Train, evaluate and serve reinforcement-learning agents"
)]
struct Cli {
    /// Report zero wall-clock times and epoch timestamps so outputs are reproducible byte for byte.
    #[arg(long, global = true)]
    frozen_clock: bool,

    /// Worker threads for concurrently running sessions.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List built-in agents or environments.
    List {
        #[arg(value_enum)]
        what: ListKind,
    },
    /// Train an agent and save the resulting model.
    Train(TrainArgs),
    /// Evaluate a saved model greedily.
    Test(TestArgs),
    /// Run the HTTP and WebSocket API.
    Serve(ServeArgs),
    /// Plugin tools.
    Plugin {
        #[command(subcommand)]
        command: PluginCommand,
    },
    /// Run several seeded training sessions concurrently.
    Parallel {
        /// JSON array of run configurations.
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ListKind {
    Agents,
    Envs,
}

#[derive(Debug, Args)]
struct HpArgs {
    /// Hyperparameter override, repeatable.
    #[arg(long = "hp", value_name = "KEY=VALUE")]
    hp: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    agent: String,
    #[command(flatten)]
    hp: HpArgs,
    /// Where to write the trained model.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the per-episode results CSV.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Print one line per finished episode.
    #[arg(long)]
    watch: bool,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    model: PathBuf,
    /// Defaults to the environment the model was trained on.
    #[arg(long)]
    env: Option<String>,
    #[command(flatten)]
    hp: HpArgs,
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    watch: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = easyrl_service::ADDR_ENV, default_value = easyrl_service::DEFAULT_ADDR)]
    addr: String,
    /// Directory holding the built dashboard.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PluginCommand {
    /// Run the protocol conformance matrix against a plugin executable.
    Check {
        #[arg(long, value_enum)]
        kind: PluginKindArg,
        /// Per-message timeout in milliseconds.
        #[arg(long, default_value_t = easyrl_core::plugin::DEFAULT_TIMEOUT.as_millis() as u64)]
        timeout_ms: u64,
        #[arg(last = true, required = true, value_name = "CMD")]
        command: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PluginKindArg {
    #[value(alias = "environment")]
    Env,
    Agent,
}

/// Why a command ended unsuccessfully.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Run(_) => EXIT_RUN_FAILED,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Run(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message().is_empty() {
                eprintln!("error: {}", f.message());
            }
            ExitCode::from(f.exit_code())
        }
    }
}
