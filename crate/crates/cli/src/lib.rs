//! Library side of the `portopt` binary: config parsing and validation,
//! artifact paths and atomic writes, and the command implementations.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::ResolvedConfig;
pub use error::CliError;
