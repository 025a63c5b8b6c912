//! Batch limit dynamic programs for batched adaptive experiments.

pub mod allocation;
pub mod baselines;
pub mod error;
pub mod linalg;
pub mod model;
pub mod objectives;
pub mod planner;
pub mod posterior;
pub mod scalar;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = linalg::Mat<f64>;
pub type SymMatrix64 = linalg::SymMatrix<f64>;
pub type SymMatrix32 = linalg::SymMatrix<f32>;
