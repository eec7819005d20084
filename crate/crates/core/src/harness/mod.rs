//! Experiment plumbing: configuration files, checkpoints, metrics and the
//! finite-difference check suite.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod metrics;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use metrics::{MetricsRow, MetricsWriter, Phase};
