//! Experiment harness for the `gne-core` solvers: configuration, file
//! formats and the `run`, `compare`, `verify` and `oracle` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, CliResult};
