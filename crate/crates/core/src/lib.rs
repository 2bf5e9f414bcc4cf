//! Configuration health index: per-variable health curves aggregated by a
//! geometric mean, learned from configuration/performance data.

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod schema;
pub mod synth;
pub mod training;

pub use error::{ChiError, Result};
