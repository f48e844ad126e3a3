//! Quasi-Bayesian inference with open-faced sandwich adjustment.

pub mod diagnostics;
pub mod error;
pub mod gaussian;
pub mod gp;
pub mod linalg;
pub mod coverage;
pub mod model;
pub mod pairwise;
pub mod samplers;
pub mod sandwich;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use model::{Capabilities, ObjectiveModel, ParamVec, Prior, PriorSpec, Support};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type SymMatrix = linalg::SymMatrix<f64>;
pub type SpdMatrix = linalg::SpdMatrix<f64>;
