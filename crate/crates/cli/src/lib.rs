//! Library half of the `qkd` binary: configuration loading and the
//! subcommand implementations.

pub mod commands;
pub mod config;

pub use config::RunConfig;
