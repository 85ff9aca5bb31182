//! Experiment harness around `ecots-core`: configuration, the
//! generate/ingest, train, sweep and report stages, result tables and charts.

pub mod charts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
