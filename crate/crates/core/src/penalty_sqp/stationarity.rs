//! Stationarity measure from a short history of nearby gradients.

use super::problem::Evaluation;
use super::SolverError;
use crate::numerics::linalg::{norm_inf, sub};
use crate::numerics::InverseHessian;
use crate::qp::{solve_termination_qp_with, TerminationQp, TerminationSolution};

/// Objective and constraint gradients recorded at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub x: Vec<f64>,
    pub grad_f: Vec<f64>,
    pub ineq_grads: Vec<Vec<f64>>,
    pub eq_grads: Vec<Vec<f64>>,
}

impl GradientSample {
    pub fn new(x: &[f64], eval: &Evaluation) -> Self {
        Self {
            x: x.to_vec(),
            grad_f: eval.grad_f.clone(),
            ineq_grads: eval.ineq_grads.clone(),
            eq_grads: eval.eq_grads.clone(),
        }
    }
}

/// Everything needed to re-solve the stationarity QP.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityCertificate {
    pub history: Vec<GradientSample>,
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub h: InverseHessian,
    pub mu: f64,
}

impl StationarityCertificate {
    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<TerminationSolution, SolverError> {
        solve_stationarity_qp(&self.history, &self.ineq, &self.eq, &self.h, self.mu, tol, max_iter)
    }
}

/// Samples from `history` within `eval_dist` (∞-norm) of `x`.
pub fn nearby_samples<'a>(
    history: impl IntoIterator<Item = &'a GradientSample>,
    x: &[f64],
    eval_dist: f64,
) -> Vec<GradientSample> {
    history
        .into_iter()
        .filter(|s| norm_inf(&sub(&s.x, x)) <= eval_dist)
        .cloned()
        .collect()
}

pub(crate) fn solve_stationarity_qp(
    history: &[GradientSample],
    ineq: &[f64],
    eq: &[f64],
    h: &InverseHessian,
    mu: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TerminationSolution, SolverError> {
    let p = ineq.len() + eq.len();
    let mut constraint_gradients = vec![Vec::with_capacity(history.len()); p];
    for s in history {
        if s.ineq_grads.len() != ineq.len() || s.eq_grads.len() != eq.len() {
            return Err(SolverError::Dimension {
                expected: p,
                found: s.ineq_grads.len() + s.eq_grads.len(),
            });
        }
        for (block, g) in constraint_gradients
            .iter_mut()
            .zip(s.ineq_grads.iter().chain(&s.eq_grads))
        {
            block.push(g.clone());
        }
    }
    let multiplier_lower = std::iter::repeat_n(0.0, ineq.len())
        .chain(std::iter::repeat_n(-1.0, eq.len()))
        .collect();
    let tqp = TerminationQp {
        objective_gradients: history.iter().map(|s| s.grad_f.clone()).collect(),
        constraint_gradients,
        constraint_values: ineq.iter().chain(eq).copied().collect(),
        multiplier_lower,
        h,
        mu,
    };
    Ok(solve_termination_qp_with(&tqp, tol, max_iter)?)
}

/// `‖d⋄‖₂` for the given history, constraint values, `H` and `μ`.
pub fn stationarity_estimate(
    history: &[GradientSample],
    ineq: &[f64],
    eq: &[f64],
    h: &InverseHessian,
    mu: f64,
    tol: f64,
) -> Result<f64, SolverError> {
    Ok(solve_stationarity_qp(history, ineq, eq, h, mu, tol, crate::qp::DEFAULT_QP_MAX_ITER)?.stationarity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: f64, g: f64, c: f64) -> GradientSample {
        GradientSample {
            x: vec![x],
            grad_f: vec![g],
            ineq_grads: vec![vec![c]],
            eq_grads: vec![],
        }
    }

    #[test]
    fn kink_history_certifies_stationarity() {
        // |x| at 0 seen from both sides: convex hull of {−1, 1} contains 0
        let h = InverseHessian::identity(1);
        let hist = vec![
            GradientSample {
                x: vec![1e-6],
                grad_f: vec![1.0],
                ineq_grads: vec![],
                eq_grads: vec![],
            },
            GradientSample {
                x: vec![-1e-6],
                grad_f: vec![-1.0],
                ineq_grads: vec![],
                eq_grads: vec![],
            },
        ];
        let s = stationarity_estimate(&hist, &[], &[], &h, 1.0, 1e-12).unwrap();
        assert!(s < 1e-9);
        assert_eq!(
            stationarity_estimate(&hist[..1], &[], &[], &h, 1.0, 1e-12).unwrap(),
            1.0
        );
    }

    #[test]
    fn active_constraint_balances_objective() {
        // min x s.t. −x ≤ 0 at x = 0: ∇f = 1, ∇c = −1, λ = 1 cancels
        let h = InverseHessian::identity(1);
        let s = stationarity_estimate(&[sample(0.0, 1.0, -1.0)], &[0.0], &[], &h, 1.0, 1e-12).unwrap();
        assert!(s < 1e-9);
        // inactive by a margin: the linear reward −c·λ is too small to cancel fully
        let s = stationarity_estimate(&[sample(0.0, 1.0, -1.0)], &[-10.0], &[], &h, 1.0, 1e-12).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn filters_by_distance() {
        let hist = [sample(0.0, 1.0, 0.0), sample(0.5, 1.0, 0.0), sample(1e-5, 1.0, 0.0)];
        let near = nearby_samples(&hist, &[0.0], 1e-4);
        assert_eq!(near.len(), 2);
    }
}
