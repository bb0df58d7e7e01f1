//! Weak Wolfe line search on the penalty function (bracketing with
//! doubling and bisection).

use super::problem::{Evaluation, NonsmoothProblem, PenaltyValue};
use super::{SolverConfig, SolverError};
use crate::numerics::linalg::{axpy, dot};

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub t: f64,
    pub x: Vec<f64>,
    pub eval: Evaluation,
    pub penalty: PenaltyValue,
    /// `∇φ(x + td)ᵀd`
    pub dphi: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub eval: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineSearchError {
    /// `∇φᵀd ≥ 0` at the start point.
    NotDescent(f64),
    /// Bisection or expansion budget exhausted without a Wolfe point.
    /// `sample` is the rejected trial point farthest from `x` within
    /// `eval_dist`, if any.
    Exhausted {
        evaluations: usize,
        last_t: f64,
        sample: Option<Box<TrialPoint>>,
    },
    Solver(SolverError),
}

/// Finds `t` with
/// `φ(x + td) ≤ φ(x) + c₁t∇φᵀd` and `∇φ(x + td)ᵀd ≥ c₂∇φᵀd`.
/// A trial point where an oracle returns a non-finite value is treated as
/// a sufficient-decrease failure.
pub fn armijo_wolfe(
    problem: &NonsmoothProblem,
    x: &[f64],
    d: &[f64],
    phi0: f64,
    dphi0: f64,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<LineSearchOutcome, LineSearchError> {
    if !(dphi0 < 0.0) {
        return Err(LineSearchError::NotDescent(dphi0));
    }
    let (c1, c2) = (cfg.wolfe_c1, cfg.wolfe_c2);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut t = 1.0;
    let (mut bisections, mut expansions, mut evaluations) = (0, 0, 0);
    let mut sample: Option<Box<TrialPoint>> = None;
    let d_norm = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    loop {
        let mut xt = x.to_vec();
        axpy(t, d, &mut xt);
        evaluations += 1;
        match problem.evaluate(&xt) {
            Ok(eval) => {
                let penalty = eval.penalty(mu);
                let dphi = dot(&penalty.grad, d);
                if !(penalty.phi <= phi0 + c1 * t * dphi0) {
                    hi = t;
                } else if !(dphi >= c2 * dphi0) {
                    lo = t;
                } else {
                    return Ok(LineSearchOutcome {
                        t,
                        x: xt,
                        eval,
                        penalty,
                        dphi,
                        evaluations,
                    });
                }
                if t * d_norm <= cfg.eval_dist && sample.as_ref().is_none_or(|s| t > s.t) {
                    sample = Some(Box::new(TrialPoint { t, x: xt, eval }));
                }
            }
            Err(SolverError::Oracle(_)) => hi = t,
            Err(e) => return Err(LineSearchError::Solver(e)),
        }
        if hi.is_finite() {
            if bisections == cfg.max_bisections {
                return Err(LineSearchError::Exhausted {
                    evaluations,
                    last_t: t,
                    sample,
                });
            }
            bisections += 1;
            t = 0.5 * (lo + hi);
        } else {
            if expansions == cfg.max_expansions {
                return Err(LineSearchError::Exhausted {
                    evaluations,
                    last_t: t,
                    sample,
                });
            }
            expansions += 1;
            t = 2.0 * lo;
        }
    }
}
