//! Configuration files, CSV series and the `solve`, `transform`, `diagnose` and
//! `oracle` commands of the `expodelay` binary.

pub mod commands;
pub mod config;
pub mod csv_io;
pub mod diagnose;
pub mod ini;
pub mod oracle_run;
pub mod problem;
pub mod source;

use std::io;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const DIAGNOSTIC_FAILED: i32 = 1;
    pub const NON_CONTRACTION: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IO: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Solver(#[from] expodelay::Error),
    #[error("oracle: {0}")]
    Oracle(#[from] expodelay_oracle::OracleError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use expodelay::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Oracle(expodelay_oracle::OracleError::NonFinite(_)) => exit::NUMERIC,
            CliError::Oracle(_) => exit::CONFIG,
            CliError::Solver(e) => match e {
                E::NonContraction { .. } | E::NotInvertible { .. } | E::WrongCausality { .. } => {
                    exit::NON_CONTRACTION
                }
                E::Numeric(_) | E::NotConverged { .. } => exit::NUMERIC,
                _ => exit::CONFIG,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
