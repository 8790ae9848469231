//! Experiment harness for the `rahfl` simulator: config files, the command
//! line, metrics artifacts and ablation grids.

pub mod cli;
pub mod config;
mod error;
pub mod metrics;
pub mod runner;

pub use error::{HarnessError, Result};
