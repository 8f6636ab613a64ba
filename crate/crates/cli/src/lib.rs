//! Batch runner for the Liouville density machine: configuration files,
//! training, observable estimation, exact sweeps and sampler diagnostics.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Preset, RunConfig};
pub use error::CliError;
