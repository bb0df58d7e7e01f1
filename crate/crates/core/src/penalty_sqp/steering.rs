//! Search direction from the box-constrained dual QP and the penalty
//! steering loop.

use super::problem::{Evaluation, NonsmoothProblem};
use super::{SolverConfig, SolverError};
use crate::numerics::linalg::{axpy, dot};
use crate::numerics::{InverseHessian, Matrix};
use crate::qp::{solve_box_qp_with, BoxQp, QpError};

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringOutcome {
    pub d: Vec<f64>,
    pub mu: f64,
    pub shrinks: usize,
    /// Dual QPs that hit the iteration cap; their best iterate was used.
    pub qp_fallbacks: usize,
}

/// Precomputed `H∇f`, `H∇cᵢ` and `JᵀHJ` so each `μ` trial only costs one
/// small box QP.
pub(crate) struct DirectionSolver<'a> {
    eval: &'a Evaluation,
    h_grad_f: Vec<f64>,
    h_cols: Vec<Vec<f64>>,
    q: Matrix,
    jt_h_grad_f: Vec<f64>,
    values: Vec<f64>,
    lower: Vec<f64>,
    qp_tol: f64,
    qp_max_iter: usize,
}

impl<'a> DirectionSolver<'a> {
    pub fn new(eval: &'a Evaluation, h: &InverseHessian, cfg: &SolverConfig) -> Result<Self, SolverError> {
        let h_grad_f = h.apply(&eval.grad_f)?;
        let cols: Vec<&Vec<f64>> = eval.constraint_gradients().collect();
        let h_cols: Vec<Vec<f64>> = cols.iter().map(|c| h.apply(c)).collect::<Result<_, _>>()?;
        let p = cols.len();
        let mut q = Matrix::zeros(p, p);
        for a in 0..p {
            for b in 0..=a {
                let v = dot(cols[a], &h_cols[b]);
                q[(a, b)] = v;
                q[(b, a)] = v;
            }
        }
        let jt_h_grad_f = cols.iter().map(|c| dot(c, &h_grad_f)).collect();
        Ok(Self {
            eval,
            h_grad_f,
            h_cols,
            q,
            jt_h_grad_f,
            values: eval.constraint_values(),
            lower: eval.multiplier_lower(),
            qp_tol: cfg.qp_tol,
            qp_max_iter: cfg.qp_max_iter,
        })
    }

    /// `d = −H(μ∇f + Jλ)` with `λ` from the dual QP at `mu`. The second
    /// value reports whether the QP had to fall back to its best iterate.
    pub fn direction(&self, mu: f64) -> Result<(Vec<f64>, bool), SolverError> {
        let mut d: Vec<f64> = self.h_grad_f.iter().map(|g| -mu * g).collect();
        if self.h_cols.is_empty() {
            return Ok((d, false));
        }
        let b: Vec<f64> = self
            .jt_h_grad_f
            .iter()
            .zip(&self.values)
            .map(|(jg, c)| mu * jg - c)
            .collect();
        let upper = vec![1.0; b.len()];
        let qp = BoxQp::new(self.q.clone(), b, self.lower.clone(), upper)?;
        let (lambda, fallback) = match solve_box_qp_with(&qp, self.qp_tol, self.qp_max_iter) {
            Ok(sol) => (sol.x, false),
            Err(QpError::NotConverged(best)) => (best.x, true),
            Err(e) => return Err(e.into()),
        };
        for (l, hc) in lambda.iter().zip(&self.h_cols) {
            axpy(-l, hc, &mut d);
        }
        Ok((d, fallback))
    }

    fn reduction(&self, violation: f64, d: &[f64]) -> f64 {
        violation - self.eval.linear_violation(d)
    }
}

/// Steering on an existing evaluation. The predicted violation reduction
/// `v(x) − l(d; x)` must reach `c_v` times the reduction achievable with the
/// objective switched off; otherwise `μ` shrinks by `c_μ`. No steering
/// happens at points with `v ≤ τ_v`.
pub fn steer(
    eval: &Evaluation,
    h: &InverseHessian,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<SteeringOutcome, SolverError> {
    if !(mu > 0.0) {
        return Err(SolverError::InvalidConfig(
            "steering needs a positive penalty parameter",
        ));
    }
    let solver = DirectionSolver::new(eval, h, cfg)?;
    let mut fallbacks = 0;
    let (mut d, fb) = solver.direction(mu)?;
    fallbacks += fb as usize;
    let v = eval.violation();
    if v <= cfg.tau_violation || solver.reduction(v, &d) >= cfg.c_v * v {
        return Ok(SteeringOutcome {
            d,
            mu,
            shrinks: 0,
            qp_fallbacks: fallbacks,
        });
    }
    let (d_ref, fb) = solver.direction(0.0)?;
    fallbacks += fb as usize;
    let target = cfg.c_v * solver.reduction(v, &d_ref);
    let mut mu_new = mu;
    let mut shrinks = 0;
    while solver.reduction(v, &d) < target {
        if shrinks == cfg.max_steering_shrinks {
            d = d_ref;
            break;
        }
        mu_new *= cfg.c_mu;
        shrinks += 1;
        let (next, fb) = solver.direction(mu_new)?;
        fallbacks += fb as usize;
        d = next;
    }
    Ok(SteeringOutcome {
        d,
        mu: mu_new,
        shrinks,
        qp_fallbacks: fallbacks,
    })
}

pub fn steering(
    problem: &NonsmoothProblem,
    x: &[f64],
    h: &InverseHessian,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<SteeringOutcome, SolverError> {
    let eval = problem.evaluate(x)?;
    steer(&eval, h, mu, cfg)
}
