//! Configuration, subcommands and artifact writers behind the `fbvie` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod tabular;

pub use commands::{run, Command, Exit, Outcome};
pub use config::{LoadedConfig, RunConfig};
