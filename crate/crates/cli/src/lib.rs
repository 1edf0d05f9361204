//! Experiment harness for behavior-guard: configs, the experiment pipeline, named
//! presets, reports and plot data. The `behavior-guard` binary is a thin layer on top.

pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod presets;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::run_experiment;
pub use report::Report;
