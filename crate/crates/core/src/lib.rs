//! Optimal value-of-information transmission scheduling for networked LQG control.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod linalg;
pub mod mdp;
pub mod model;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
