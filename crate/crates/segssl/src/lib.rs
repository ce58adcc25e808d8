//! IO, file formats and the training/evaluation pipeline around
//! `segssl-core`: WAV files, JSON-lines manifests, the JSON run
//! configuration, statistics files, checkpoints, metrics logs, SVG plots
//! and the `segssl` command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod stats;
pub mod wav;

pub use error::{Error, Result};
