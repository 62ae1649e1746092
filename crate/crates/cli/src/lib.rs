//! Experiment plumbing behind the `amaml` binary: configuration, presets,
//! initialization files and the subcommand bodies.

pub mod commands;
pub mod config;
pub mod theta_file;

pub use config::{ExperimentConfig, TaskConfig, TaskKind};
