pub mod agent;
pub mod config;
pub mod diagnostics;
pub mod diffcore;
pub mod distributions;
pub mod envs;
pub mod error;
pub mod models;
pub mod objectives;
pub mod oracle;
pub mod planner;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
