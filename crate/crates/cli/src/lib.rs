//! Configuration and subcommands of the `levy-transport` executable.

pub mod commands;
pub mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] levy_transport::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub use commands::Report;
pub use config::{Preset, RunConfig};
