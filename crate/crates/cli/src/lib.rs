//! Command-line harness: configuration, orchestration and report emission.

pub mod config;
pub mod emit;
pub mod run;

pub use config::{parse_args, ConfigError, RunConfig, Subcommand};
pub use run::{execute, run, Outcome, RunError, RunSummary};
