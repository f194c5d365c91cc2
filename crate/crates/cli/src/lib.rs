//! Library side of the `kgranger` command-line tool: configuration,
//! experiment execution and graph export.

pub mod config;
pub mod error;
pub mod experiment;
pub mod export;

pub use config::{ExperimentConfig, LagSetting, Method};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, write_report, RunReport};
