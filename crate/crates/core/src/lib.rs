//! Causal tracing and rank-one model editing on a small, fully controllable
//! autoregressive transformer.
//!
//! * [`numerics`]: dense matrices, key second moments, constrained
//!   least-squares rank-one updates.
//! * [`model`]: the transformer, activation patching, gradients, training.
//! * [`dataset`]: synthetic worlds, training corpora, counterfactual records.
//! * [`tracing`]: noise corruption and state restoration grids.
//! * [`editor`]: rank-one edits and fine-tuning baselines.
//! * [`metrics`]: edit evaluation and aggregation.

pub mod dataset;
pub mod editor;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tracing;

pub use error::{Error, Result};

/// Version of this crate, embedded in every artifact the pipelines write.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
