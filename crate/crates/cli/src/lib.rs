//! Experiment harness around `ares-core`: configuration, file formats and
//! the `simulate`, `estimate`, `detect`, `montecarlo` and `compare` runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::{ExperimentConfig, Setup};
pub use error::{CliError, CliResult, EXIT_NUMERICAL, EXIT_USAGE};
pub use io::{DetectionRow, MetricsRow};
