//! Experiment runner for tadlab: manifest-driven pipelines and the
//! single-stage subcommands behind the `tadlab` binary.

pub mod cache;
pub mod commands;
pub mod io;
pub mod log;
pub mod manifest;
pub mod pipeline;

pub use manifest::ExperimentManifest;
pub use pipeline::{run_manifest, Cell, RunOptions, RunReport};
