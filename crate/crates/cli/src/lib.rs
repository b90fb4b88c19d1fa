//! Command-line driver: configuration resolution and the `train`, `eval`,
//! `trace` and `compare` commands.

pub mod commands;
pub mod config;
mod error;

pub use config::{ModeName, Overrides, RunConfig};
pub use error::{CliError, Result};
