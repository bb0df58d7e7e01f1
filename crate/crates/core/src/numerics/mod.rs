//! Dense arithmetic, BFGS inverse-Hessian maintenance and finite differences.

mod bfgs;
mod diff;
pub mod linalg;

pub use bfgs::{CurvaturePair, HessianMode, InverseHessian, UpdateStatus, CURVATURE_SKIP, DEFAULT_MEMORY};
pub use diff::finite_diff_grad;
pub use linalg::Matrix;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}
