//! Reward-free pretraining with a particle entropy bonus and successor
//! features, task inference by reward regression, and fine-tuning, on
//! key-and-door gridworlds.

pub mod checkpoint;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod features;
pub mod gridworld;
pub mod nn;
pub mod rewards;
pub mod successor;
pub mod trainer;

pub use error::{Error, Result};
