//! Link-level MCS adaptation with map side information.
//!
//! The crate simulates a single-BS, single-user downlink multicarrier link in
//! a synthetic urban scene and trains an MCS-selection agent on it. The agent
//! sees compressed pilot feedback and, when a cost-aware gate decides it is
//! worth it, a received-power estimate produced by a map encoder from a
//! five-channel aerial raster. A learned world model predicts next feedback
//! frames and rewards; it filters risky actions and drives imagined policy
//! updates after the environment shifts.

pub mod agent;
pub mod channel;
pub mod error;
pub mod gate;
pub mod harness;
pub mod link;
pub mod nn;
pub mod rng;
pub mod scene;
pub mod world_model;

pub use error::{Error, Result};
