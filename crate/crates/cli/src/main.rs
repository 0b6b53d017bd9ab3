//! `occukernel`: reproduce occupation-kernel identification experiments
//! from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{ConvergenceArgs, StreamArgs, SweepArgs};
use config::Settings;

#[derive(Parser, Debug)]
#[command(
    name = "occukernel",
    version,
    about = "Nonlinear system identification with occupation kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured trajectories as CSV files
    Simulate,
    /// Identify the parameters and write result.csv
    Identify,
    /// Repeat identification over kernel widths or trajectory counts
    Sweep(SweepArgs),
    /// Kernel vs integral least squares on noisy segmented Lorenz data
    Montecarlo,
    /// Error against step size and the fitted convergence order
    Convergence(ConvergenceArgs),
    /// Online estimates from `t,x1,...,xn` rows on standard input
    Stream(StreamArgs),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(occukernel::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(_) => "input",
            CliError::Io(_) => "io",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<occukernel::Error> for CliError {
    fn from(e: occukernel::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = cli.settings.resolve_file()?;
    match cli.command {
        Command::Simulate => commands::simulate(&settings),
        Command::Identify => commands::identify(&settings),
        Command::Sweep(args) => commands::sweep(&settings, &args),
        Command::Montecarlo => commands::montecarlo(&settings),
        Command::Convergence(args) => commands::convergence(&settings, &args),
        Command::Stream(args) => commands::stream(&settings, &args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!(
                "error: code={code} kind={} message={:?}",
                e.kind(),
                e.to_string()
            );
            ExitCode::from(code)
        }
    }
}
