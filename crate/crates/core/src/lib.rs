//! Simulation and analysis of strongly coupled two-level-system defects in
//! frequency-tunable transmons.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fitstats;
pub mod oracle;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod specgen;

pub use error::{Error, Result};
