//! Disrupted railway hub simulator with a two-step DQN dispatcher.

pub mod agent;
pub mod config;
pub mod datagen;
pub mod env;
pub mod error;
pub mod fleet;
pub mod harness;
pub mod instance;
pub mod mobility;
pub mod network;
pub mod rewards;
pub mod time;

pub use error::{Error, Result};
