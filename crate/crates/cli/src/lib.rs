//! Command-line front end: corpus synthesis, training, scoring,
//! evaluation, gradient checking and parameter counting.

mod commands;
mod config;

pub use commands::{Cli, Command};
pub use config::{RunConfig, PATH_KEYS};

use std::fmt::{self, Display};
use std::io::Write;

use clap::Parser;
use cnbnn::data::DataError;
use cnbnn::model::ModelError;
use cnbnn::objective::MetricsError;
use cnbnn::train::TrainError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(e: impl Display) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    pub fn io(e: impl Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }

    pub fn numeric(e: impl Display) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: e.to_string(),
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Contract(_) => CliError::usage(e),
            _ => CliError::io(e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonFinite(_) => CliError::numeric(e),
            _ => CliError::usage(e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::usage(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::numeric(e),
            TrainError::Data(d) => d.into(),
            TrainError::Metrics(m) => m.into(),
            TrainError::Checkpoint(_) => CliError::io(e),
            TrainError::Config(_) | TrainError::Contract(_) | TrainError::NoTraining | TrainError::Model(_) => {
                CliError::usage(e)
            }
        }
    }
}

impl From<cnbnn::train::CheckpointError> for CliError {
    fn from(e: cnbnn::train::CheckpointError) -> Self {
        CliError::io(e)
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Results go to `out`, diagnostics to `err`.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match commands::execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}
