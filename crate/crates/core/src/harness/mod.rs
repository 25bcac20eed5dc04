//! Experiment harness: configuration, the real link, the per-slot deployment
//! loop, experiment drivers, metrics and plots.

pub mod config;
pub mod deploy;
pub mod env;
pub mod experiments;
pub mod metrics;
pub mod plots;
pub mod selftest;

pub use config::{ExperimentConfig, Scheme};
pub use deploy::{Deployment, Models, Phase};
pub use env::RealEnv;
