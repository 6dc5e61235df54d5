//! Offline-to-online actor-critic training: behavior-cloning-regularized
//! pre-training, randomized critic ensembles, replay downsampling and an
//! adaptive behavior-cloning weight for fine-tuning.

pub mod adaptive_bc;
pub mod agent;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod forge;
pub mod nn;
pub mod replay;
pub mod rng;
mod textio;
pub mod train;

pub use error::{Error, Result};
pub use cli::run_cli;
