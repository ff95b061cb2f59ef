//! Experiment driver for the free-boundary laboratory. Four subcommands over
//! line-oriented config files, with a stable exit-code contract:
//! 0 = all checks pass, 1 = config or usage error, 2 = non-convergence or a
//! failed verification, 3 = nothing to verify.

mod config;
mod oracle;
mod solve;
mod study;
mod verify;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub enum CliError {
    /// Bad config, bad usage, unreadable inputs. Exit 1.
    Config(String),
    /// An error surfaced by the core library mid-run.
    Core(fbflow_core::Error),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(fbflow_core::Error::NonConvergence { .. }) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<fbflow_core::Error> for CliError {
    fn from(e: fbflow_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub(crate) fn write_json<T: serde::Serialize>(
    path: &std::path::Path,
    value: &T,
) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    body.push('\n');
    std::fs::write(path, body)?;
    Ok(())
}

#[derive(Parser)]
#[command(name = "fbflow", about = "Free-boundary experiment driver", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; overrides the config's `[output] dir` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel phases; overrides `[solver] workers`
    /// (0 or absent = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the configured energy and write the solution artifacts.
    Solve { config: PathBuf },
    /// Check a solution field against the configured interface conditions.
    Verify { config: PathBuf, field: PathBuf },
    /// Run the ε-ladder and tabulate per-stage interface statistics.
    Continuation { config: PathBuf },
    /// Run a self-check suite: planar, vexp, or all.
    Oracle { suite: String },
}

/// Size the global worker pool once per process; later calls keep the first
/// size, which is fine because every subcommand initializes before working.
fn init_workers(n: usize) {
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Solve { config } => {
            let cfg = config::load(config, cli.out.as_deref(), cli.workers)?;
            init_workers(cfg.workers);
            solve::run(&cfg)
        }
        Command::Verify { config, field } => {
            let cfg = config::load(config, cli.out.as_deref(), cli.workers)?;
            init_workers(cfg.workers);
            verify::run(&cfg, field)
        }
        Command::Continuation { config } => {
            let cfg = config::load(config, cli.out.as_deref(), cli.workers)?;
            init_workers(cfg.workers);
            study::run(&cfg)
        }
        Command::Oracle { suite } => {
            init_workers(cli.workers.unwrap_or(0));
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            oracle::run(suite, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, everything else is a
            // usage error mapped onto the config-error exit code.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fbflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
