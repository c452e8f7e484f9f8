//! Experiment runner for federated learning with private domain experts.
//!
//! Reads TOML experiment configs, builds the per-user datasets (synthetic or
//! from a sparse file), runs Baseline, FL and FL+DE over a grid of DP noise
//! multipliers and writes the results as CSV. The training code itself lives
//! in `flde-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod sparse;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
