//! Federated training simulator for dense classifiers.
//!
//! The crate simulates cross-device federated averaging on a single
//! machine: a shared model is broadcast to `t` clients holding IID shards
//! of the training data, each client runs local RMSprop, and the server
//! merges the returned models by unweighted layer-wise averaging. Client
//! updates can travel through a pairwise-masked secure aggregation layer
//! so the server only ever sees the sum.
//!
//! Everything is deterministic given a seed: data synthesis, splits,
//! shard assignment, weight initialization, batch order, and masking.

pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod secagg;
pub mod seeds;

pub use error::{Error, Result};
