//! Continual task allocation in a masked meta-policy network.
//!
//! Each task is described by an embedding vector. Per hidden layer, the
//! embedding is lasso-coded against a learned over-complete dictionary whose
//! atoms stand for the layer's neurons; the positive support of the code
//! selects the neurons (the task's sub-network). Weights used by earlier
//! tasks are never written again, so their sub-networks keep producing the
//! same outputs bit for bit.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints and
//! the command-line front end live in the `sparse-prompt` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dictionary;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod sparse_coding;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Matrix;
