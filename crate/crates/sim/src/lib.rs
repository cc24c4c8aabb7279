//! Experiment runner for the prototype-exchange federated simulator: config
//! files, presets, seeded runs with a worker pool, artifact files and replay.

pub mod config;
pub mod error;
pub mod io;
pub mod parallel;
pub mod presets;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{Result, SimError};
