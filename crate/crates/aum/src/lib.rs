//! Experiment harness for `aum-core`: configuration, file formats and the
//! `generate`, `train`, `sweep` and `ablate` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
