//! Deterministic simulator for SISA-style split learning with machine
//! unlearning: clients train lower model halves on private shards, a server
//! trains the upper half from cached cut-layer activations, and three
//! unlearning strategies run with exact compute and byte accounting.

pub mod bundle;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod pipelines;
pub mod protocol;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Batch of row vectors.
pub type Tensor = nn::Matrix<f64>;
pub type MlpModel = nn::Mlp<f64>;
