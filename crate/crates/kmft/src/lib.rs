//! Experiment runners, file formats and configuration for the `kmft` command.
//!
//! The numerical work lives in [`kmft_core`]; this crate adds everything that
//! touches files, the environment or threads.

pub mod config;
pub mod error;
pub mod formats;
pub mod runners;
pub mod sweep;

pub use config::{Experiment, ExperimentConfig};
pub use error::{ConfigError, RunError};
