//! Malthusian reinforcement learning: species distributions over islands,
//! gridworld games, an actor-critic learner and the loop that ties them.

pub mod config;
pub mod error;
pub mod games;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod orchestrator;
pub mod pomg;
pub mod population;
pub mod rng;

pub use error::{Error, Result};
