//! Robustness certification for cooperative multi-agent value-based policies
//! via randomized policy smoothing.

pub mod attack;
pub mod certify;
pub mod cli;
pub mod envs;
pub mod error;
pub mod nn;
pub mod policy;
pub mod smoothing;
pub mod stats;

pub use error::{Error, Result};
