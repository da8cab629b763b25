//! Neighbor-transfer training for multi-modal mappings learned from sparse
//! annotations: the autodiff substrate, task models, adaptive neighborhoods,
//! objectives, synthetic benchmarks and evaluation metrics.

pub mod diff;
pub mod error;
pub mod metrics;
pub mod models;
pub mod neighborhood;
pub mod objectives;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
