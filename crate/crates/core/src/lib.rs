//! Link-weight routing on a packet-level simulator, driven by a DDPG agent.
//!
//! - [`topology`]: graph, link weights, shortest paths and forwarding tables.
//! - [`sim`]: discrete-event packet simulator with drop-tail FIFO links.
//! - [`env`]: reset/step environment (traffic-matrix state, weight action,
//!   negative mean delay reward).
//! - [`nn`]: dense networks, gradients, Adam, checkpoints.
//! - [`ddpg`]: actor-critic agent, replay, OU noise, training loop.
//! - [`baselines`], [`eval`]: OSPF and random-weight controllers and
//!   noise-free evaluation.
//! - [`config`], [`experiment`]: config files and the train/eval/compare
//!   commands.

pub mod baselines;
pub mod config;
pub mod ddpg;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
