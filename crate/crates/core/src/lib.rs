//! Deterministic simulator of decoupled-momentum data-parallel training.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod cluster;
pub mod compute;
pub mod error;
pub mod harness;
pub mod optim;
pub mod replication;
pub mod scalar;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vector = compute::DenseVector<f64>;
pub type Vector32 = compute::DenseVector<f32>;
pub type Simulator = cluster::Simulator<f64>;
pub type Simulator32 = cluster::Simulator<f32>;
pub type ShardOptimizer = optim::ShardOptimizer<f64>;
pub type ShardOptimizer32 = optim::ShardOptimizer<f32>;
pub type Replicator = replication::Replicator<f64>;
pub type Replicator32 = replication::Replicator<f32>;
