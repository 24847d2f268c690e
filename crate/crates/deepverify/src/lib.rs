//! File formats, configuration and the command line around `deepverify-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;

pub use commands::{CliError, Options, Outcome};
pub use config::{ConfigError, RunConfig};
