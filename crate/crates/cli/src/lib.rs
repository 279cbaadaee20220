//! Experiment tooling around `dimix-core`: configs, datasets, checkpoints,
//! training, analysis, and benchmarking, shared by the `dimix` binary and
//! the integration tests.

pub mod analysis;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod memtrack;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
