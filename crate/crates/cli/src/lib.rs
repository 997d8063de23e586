//! Command-line driver for the planner: generation, training, evaluation,
//! gradient self-check and plotting.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use commands::{run, Cli};
pub use config::RunConfig;
pub use error::CliError;
