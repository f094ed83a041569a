//! Online learning of two-threshold offloading rules for hierarchical
//! inference, with baselines, data generators and an experiment harness.

pub mod baselines;
pub mod calibrated;
pub mod cli;
pub mod datagen;
pub mod domain;
pub mod error;
pub mod exact;
pub mod h2t2;
pub mod harness;

pub use error::{Error, Result};
