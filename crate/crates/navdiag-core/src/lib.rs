//! Synthetic navigation benchmarks and diagnostics for environment bias in
//! instruction-guided agents.
//!
//! The crate builds small indoor worlds with controllable visual styles,
//! trains a compact imitation-learning agent on top of interchangeable
//! feature representations, and measures how much of the agent's
//! seen/unseen performance gap is explained by environment-specific
//! appearance rather than by language or layout.

pub mod agent;
pub mod error;
pub mod evalreport;
pub mod featurize;
pub mod navgraph;
pub mod neuralcore;
pub mod pipeline;
pub mod rng;
pub mod textmetrics;
pub mod worldgen;

pub use error::{Error, Result};
