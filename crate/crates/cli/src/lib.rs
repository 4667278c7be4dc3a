//! File formats and command-line workflows around `htsat-core`: WAV input,
//! CSV manifests, `key = value` configs, HTSC checkpoints, the synthetic
//! tone-burst generator and the `htsat` commands.

pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod synth;

pub use config::{RunConfig, TrainingConfig};
pub use error::{CliError, Result};
