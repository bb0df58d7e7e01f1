//! BFGS-SQP exact-penalty method for nonsmooth, nonconvex constrained
//! problems.
//!
//! Each iteration solves a box-constrained dual QP for the search direction,
//! steers the penalty parameter so the linearized violation drops enough,
//! runs a weak Wolfe line search on `φ = μf + v` and updates the inverse
//! Hessian approximation. Termination uses a stationarity QP over nearby
//! gradients.

mod config;
mod line_search;
mod problem;
mod solver;
mod stationarity;
mod steering;

pub use config::{BestIterate, IterationRecord, SolverConfig, SolverReport, Termination};
pub use line_search::{armijo_wolfe, LineSearchError, LineSearchOutcome, TrialPoint};
pub use problem::{linear_violation_model, penalty_eval, Evaluation, NonsmoothProblem, Oracle, PenaltyValue};
pub(crate) use solver::screens_better;
pub use solver::solve;
pub use stationarity::{nearby_samples, stationarity_estimate, GradientSample, StationarityCertificate};
pub use steering::{steer, steering, SteeringOutcome};

use thiserror::Error;

use crate::numerics::NumericsError;
use crate::qp::QpError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{0} oracle returned a non-finite value")]
    Oracle(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("QP subproblem failed: {0}")]
    Qp(#[from] QpError),
}
