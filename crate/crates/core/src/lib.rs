//! Leakage-safe, deterministic evaluation protocol for multi-unit time-series
//! prognostics and diagnostics.
//!
//! Raw per-unit trajectories flow through an explicit pipeline: transform,
//! align, window, split, model, metric. Every stateful transform is fitted
//! on the training partition only, every transformed index carries the raw
//! time it came from, and pipeline checkpoints are cached under content keys.

pub mod cache;
pub mod datasource;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod models;
pub mod partition;
pub mod runner;
pub mod transforms;
pub mod windowing;

pub use error::{Error, Result};
