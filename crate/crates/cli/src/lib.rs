//! File formats, transports and the command layer for the `del` tool.

pub mod commands;
pub mod config;
mod error;
pub mod harness;
pub mod output;
pub mod partition_files;
pub mod transport;

pub use error::{CliError, Result};
