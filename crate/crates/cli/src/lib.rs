//! Experiment driver: configuration, the `run` / `train` / `bench` / `plot`
//! subcommands, CSV and JSON outputs and SVG figures.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;

pub use commands::{cmd_bench, cmd_plot, cmd_run, cmd_train, ExperimentReport};
pub use config::{load_config, Method, PathKind, RunConfiguration};
pub use error::{CliError, CliResult};
