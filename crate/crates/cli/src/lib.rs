//! Command implementations behind the `mmfuse` binary.

pub mod compare;
pub mod config;
pub mod error;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
