//! Benchmarks, sweeps and reporting around `bldp-core`.

pub mod bench;
pub mod config;
pub mod episode;
pub mod error;
pub mod pareto;
pub mod plan;
pub mod quantiles;

pub use error::{HarnessError, Result};
