//! Library half of the `tpem` binary: configuration, system assembly and the verbs.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    /// The run completed but was rejected (certificate, check or solver failure).
    #[error("{0}")]
    Rejected(String),
    #[error(transparent)]
    Core(#[from] tpem_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use tpem_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Rejected(_) => 2,
            CliError::Core(e) => match e {
                E::StepSingular { .. }
                | E::NonFinite { .. }
                | E::Uncertified(_)
                | E::FrequencyTooSmall { .. }
                | E::Numerical(_)
                | E::Singular { .. }
                | E::Pivot { .. }
                | E::Hypothesis { .. } => 2,
                _ => 1,
            },
        }
    }
}
