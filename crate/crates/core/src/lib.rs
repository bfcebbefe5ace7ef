//! Data-incremental continual offline reinforcement learning at desk scale.
//!
//! A single task is learned from an ordered sequence of offline datasets of
//! varying quality. The crate provides the environments and their exact
//! oracles, dataset generation and storage, the CQL / IQL / ensemble-IQL
//! update rules, a Q-ranked trajectory replay buffer, and the sequence runner
//! that measures forgetting.

pub mod algo;
pub mod continual;
pub mod data;
pub mod env;
pub mod error;
pub mod nn;
pub mod replay;
pub mod seed;

pub use error::{Error, Result};
