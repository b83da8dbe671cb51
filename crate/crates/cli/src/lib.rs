//! Command-line driver for the narrow-gap solver: configuration parsing,
//! command dispatch and report files.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;

use clap::Parser;
use serde_json::json;

pub use commands::{run, Cli, Command, CommonArgs};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },

    #[error(transparent)]
    Core(#[from] narrowgap::Error),
}

impl CliError {
    /// 1 usage or bad input, 2 failed hypothesis, 3 solver failure,
    /// 4 failed acceptance gate.
    pub fn exit_code(&self) -> i32 {
        use narrowgap::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Hypothesis(_) | E::Geometry(_) => 2,
                E::Solver { .. } | E::NonFinite(_) => 3,
                E::Gate(_) => 4,
                E::Domain(_) | E::Parse { .. } | E::InvalidParameter(_) => 1,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        use narrowgap::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::Domain(_) => "domain",
                E::Parse { .. } => "parse",
                E::InvalidParameter(_) => "invalid_parameter",
                E::Hypothesis(_) => "hypothesis",
                E::Geometry(_) => "geometry",
                E::NonFinite(_) => "non_finite",
                E::Solver { .. } => "solver",
                E::Gate(_) => "gate",
            },
        }
    }

    /// Machine-readable record written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Core(narrowgap::Error::Solver { residual, history, .. }) = self {
            v["residual"] = json!(residual);
            v["iterations"] = json!(history.len());
        }
        v
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
