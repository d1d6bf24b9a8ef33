//! Deep reinforcement learning workbench for multirotor waypoint navigation
//! during aerial material deposition.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: point-mass flight model with deposition force and wind
//! - [`env`]: observation, reward, termination and waypoint handling
//! - [`nn`]: dense networks, backpropagation, Adam
//! - [`agents`]: replay buffer, exploration noise, DDPG and TD3
//! - [`curriculum`]: staged training C1 to C4
//! - [`eval`]: test protocol, metrics and exports
//! - [`config`] and [`checkpoint`]: run configuration and persisted agents

pub mod agents;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod nn;
pub mod seeding;
