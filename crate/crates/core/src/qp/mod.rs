//! Projections onto simple sets and the two QP subproblems solved by the
//! penalty-SQP method on every iteration.

mod box_qp;
mod projection;
mod termination;

pub use box_qp::{solve_box_qp, solve_box_qp_with, BoxQp, QpSolution, DEFAULT_QP_MAX_ITER, DEFAULT_QP_TOL};
pub use projection::{project, project_linf_box, ProjectionSet};
pub use termination::{solve_termination_qp, solve_termination_qp_with, TerminationQp, TerminationSolution};

pub(crate) use projection::{project_l1_ball, project_l2_ball};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("non-finite input")]
    NonFinite,
    #[error("dimension mismatch")]
    Dimension,
    #[error("invalid set: {0}")]
    InvalidSet(&'static str),
    #[error("point {0} lies outside [0, 1]")]
    OutOfBox(f64),
    #[error("quadratic term is not symmetric")]
    NotSymmetric,
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("penalty parameter must be non-negative, got {0}")]
    NegativePenalty(f64),
    #[error("gradient history is empty")]
    EmptyHistory,
    #[error("iteration cap reached (residual {:.3e})", .0.kkt_residual)]
    NotConverged(Box<QpSolution>),
}
