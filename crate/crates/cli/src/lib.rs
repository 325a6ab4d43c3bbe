//! Command line, run directories and file formats for `cssbo-core`.

pub mod checkpoint;
pub mod codefile;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod fitbench;
pub mod report;
pub mod run;

pub use error::{CliError, Result};
