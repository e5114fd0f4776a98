//! The `deepwarp` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

pub mod args;
mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values, detected before any work starts.
    Usage(String),
    Runtime(deepwarp_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<deepwarp_core::Error> for CliError {
    fn from(e: deepwarp_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `argv` (including the program name), merging `--config` entries.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let argv = match config::config_path(&argv) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                Cli::command().error(
                    ErrorKind::Io,
                    format!("cannot read config {}: {e}", path.to_string_lossy()),
                )
            })?;
            let entries = config::parse_config(&text)
                .map_err(|m| Cli::command().error(ErrorKind::InvalidValue, m))?;
            config::expand(&Cli::command(), argv, &entries)
                .map_err(|m| Cli::command().error(ErrorKind::UnknownArgument, m))?
        }
        None => argv,
    };
    Cli::try_parse_from(argv)
}

/// Runs the tool and returns the process exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Runtime(_) => EXIT_RUNTIME,
            }
        }
    }
}
