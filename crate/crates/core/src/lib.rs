pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod sim;

pub use error::{Error, Result};
