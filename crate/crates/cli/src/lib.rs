//! Command-line driver for coalition detection.
//!
//! Besides the `coalition` binary this crate owns the on-disk hidden-state
//! format ([`hsd`]) and heatmap output ([`pgm`]). [`run`] is the whole CLI as a
//! function from arguments to an exit code.

pub mod cli;
pub mod commands;
pub mod hsd;
pub mod pgm;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use thiserror::Error;

use cli::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Hsd(#[from] hsd::HsdError),

    #[error(transparent)]
    Core(#[from] coalition_core::Error),

    #[error(transparent)]
    Sim(#[from] coalition_sim::SimError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::EstimateMi { input, mi, out } => commands::estimate_mi(&input, &mi, out.as_deref()),
        Command::Partition { input, out } => commands::partition(&input, out.as_deref()),
        Command::Hierarchy { input, tau, min_size, format, out } => {
            commands::hierarchy(&input, tau, min_size, format, out.as_deref())
        }
        Command::Track { inputs, window, mi, out } => commands::track(&inputs, window, &mi, out.as_deref()),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Stats { input, format, out } => commands::stats(&input, format, out.as_deref()),
        Command::Report { inputs, format, out } => commands::report(&inputs, format, out.as_deref()),
        Command::Render { input, cell, out } => commands::render(&input, cell, out.as_deref()),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Hsd(h) => eprintln!("error[{}]: {e}", h.code()),
                _ => eprintln!("error: {e}"),
            }
            e.exit_code()
        }
    }
}
