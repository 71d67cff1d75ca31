//! Experiment harness around `mbgnn-core`: configuration, dataset and tensor
//! file formats, model checkpoints, and the per-subcommand experiment
//! runners behind the `mbgnn` binary.

pub mod builders;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod mbgt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// A usage-level problem (bad key, bad value, missing setting); the CLI
    /// maps these to exit code 2.
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] mbgnn_core::CoreError),
}
