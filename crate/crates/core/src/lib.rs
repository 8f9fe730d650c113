//! Diagnostics for Bayesian models built from posterior draws, model
//! simulators, and data: convergence, calibration, recoverability,
//! predictive comparison, parsimony, sensitivity, fairness, and causal
//! consistency, aggregated into goal-specific utility reports.

pub mod causal;
pub mod cli;
pub mod convergence;
pub mod draws;
pub mod error;
pub mod fairness;
pub mod models;
pub mod parsimony;
pub mod predictive;
pub mod recoverability;
pub mod report;
pub mod sbc;
pub mod sensitivity;
pub mod stats;

pub use error::{Error, Result};
