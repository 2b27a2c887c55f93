//! Collaborative multi-object navigation (CoMON) laboratory: a procedural
//! gridworld, oracle/navigator agents that talk over a learned channel, PPO
//! training, and tools for interpreting what the channel carries.

pub mod error;
pub mod agent;
pub mod cli;
pub mod env;
pub mod interpret;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
