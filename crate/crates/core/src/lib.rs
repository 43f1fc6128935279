//! Exploration, exploitation and evaluation of ant-system parameter tuples
//! on symmetric TSPLIB instances.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aco;
pub mod bootstrap;
pub mod engine;
pub mod fitstats;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod special;
pub mod stats;
pub mod tsp;

pub use pipeline::PipelineError as Error;
