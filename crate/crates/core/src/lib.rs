//! Core of a simulator for federated learning with private domain experts.
//!
//! A shared *general* linear model is trained across parties with
//! differentially-private federated SGD. Each party also keeps a private
//! linear *expert* and a sigmoid gate, trained without noise, and predicts
//! with the gate-weighted mixture of the two.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, configuration and
//! the command-line driver live in the `flde` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod dp;
pub mod error;
pub mod federation;
pub mod math;
pub mod models;
pub mod moe;
pub mod report;
pub mod rng;

pub use data::{ClassificationSpec, DomainSpec, Example, SplitSizes, Standardization, UserShard};
pub use dp::{DpConfig, NoisyGradient};
pub use error::{Error, Result};
pub use federation::{FlDeOutcome, GeneralParams, Mode, Predictor, TrainConfig};
pub use models::{LinearParams, TaskKind};
pub use moe::{GateParams, MoeGradients, PrivateState};
pub use report::{GateGrid, RunReport, SummaryRow};
