use std::collections::VecDeque;
use std::time::Instant;

use super::config::{BestIterate, IterationRecord, SolverConfig, SolverReport, Termination};
use super::line_search::{armijo_wolfe, LineSearchError, LineSearchOutcome};
use super::problem::{Evaluation, NonsmoothProblem};
use super::stationarity::{nearby_samples, solve_stationarity_qp, GradientSample, StationarityCertificate};
use super::steering::steer;
use super::SolverError;
use crate::numerics::linalg::{dot, scale, sub};
use crate::numerics::InverseHessian;

struct State {
    x: Vec<f64>,
    eval: Evaluation,
    stationarity: f64,
}

impl State {
    fn as_best(&self, iter: usize) -> BestIterate {
        BestIterate {
            x: self.x.clone(),
            f: self.eval.f,
            violation: self.eval.violation(),
            stationarity: self.stationarity,
            iter,
        }
    }
}

/// Screening order: feasible beats infeasible, then lower objective among
/// feasible points, lower violation among infeasible ones. Ties keep the
/// incumbent.
pub(crate) fn screens_better(cand_f: f64, cand_v: f64, best_f: f64, best_v: f64, tau_v: f64) -> bool {
    match (cand_v <= tau_v, best_v <= tau_v) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => cand_f < best_f,
        (false, false) => cand_v < best_v,
    }
}

fn stationarity(
    history: &VecDeque<GradientSample>,
    x: &[f64],
    eval: &Evaluation,
    h: &InverseHessian,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<(f64, Vec<GradientSample>), SolverError> {
    let near = nearby_samples(history, x, cfg.eval_dist);
    let sol = solve_stationarity_qp(&near, &eval.ineq, &eval.eq, h, mu, cfg.qp_tol, cfg.qp_max_iter)?;
    Ok((sol.stationarity, near))
}

/// Retries after a failed line search before giving up.
const MAX_NULL_STEPS: usize = 5;

fn push_sample(history: &mut VecDeque<GradientSample>, len: usize, sample: GradientSample) {
    if history.len() == len {
        history.pop_front();
    }
    history.push_back(sample);
}

/// Null steps: a rejected trial point near `x` joins the gradient
/// history and the search restarts along `−d⋄` from the stationarity QP.
/// The slope passed to the line search is the largest over the bundle
/// gradients. Returns the accepted step and that slope.
#[allow(clippy::too_many_arguments)]
fn null_steps(
    problem: &NonsmoothProblem,
    history: &mut VecDeque<GradientSample>,
    history_len: usize,
    state: &State,
    phi0: f64,
    grad0: &[f64],
    h: &InverseHessian,
    mu: f64,
    cfg: &SolverConfig,
    mut err: LineSearchError,
) -> Result<Option<(LineSearchOutcome, f64)>, SolverError> {
    let mut bundle = vec![grad0.to_vec()];
    for _ in 0..MAX_NULL_STEPS {
        let trial = match err {
            LineSearchError::Exhausted {
                sample: Some(trial), ..
            } => trial,
            LineSearchError::Solver(e) => return Err(e),
            _ => return Ok(None),
        };
        bundle.push(trial.eval.penalty(mu).grad);
        push_sample(history, history_len, GradientSample::new(&trial.x, &trial.eval));
        let near = nearby_samples(history.iter(), &state.x, cfg.eval_dist);
        let sol = solve_stationarity_qp(
            &near,
            &state.eval.ineq,
            &state.eval.eq,
            h,
            mu,
            cfg.qp_tol,
            cfg.qp_max_iter,
        )?;
        let d = scale(&sol.d_diamond, -1.0);
        let dphi0 = bundle.iter().map(|g| dot(g, &d)).fold(f64::NEG_INFINITY, f64::max);
        match armijo_wolfe(problem, &state.x, &d, phi0, dphi0, mu, cfg) {
            Ok(ls) => return Ok(Some((ls, dphi0))),
            Err(e) => err = e,
        }
    }
    Ok(None)
}

/// Runs the penalty BFGS-SQP method from `x0`.
pub fn solve(problem: &NonsmoothProblem, x0: &[f64], cfg: &SolverConfig) -> Result<SolverReport, SolverError> {
    cfg.validate()?;
    let start = Instant::now();
    let n = problem.dim();
    if x0.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            found: x0.len(),
        });
    }
    let history_len = cfg.history_len(n);
    let mut h = InverseHessian::new(n, cfg.hessian).with_initial_scaling(cfg.h0_scaling);
    let mut mu = cfg.mu0;
    let mut history = VecDeque::with_capacity(history_len);

    let eval = problem.evaluate(x0)?;
    history.push_back(GradientSample::new(x0, &eval));
    let (stat, near) = stationarity(&history, x0, &eval, &h, mu, cfg)?;
    let mut state = State {
        x: x0.to_vec(),
        eval,
        stationarity: stat,
    };
    let mut best = state.as_best(0);
    let mut trajectory = Vec::new();
    let mut qp_fallbacks = 0;
    let mut iterations = 0;
    let mut certificate_inputs = Some(near);

    let converged = |s: &State| s.stationarity < cfg.tau_stationarity && s.eval.violation() < cfg.tau_violation;
    let mut termination = if converged(&state) {
        Termination::ToleranceMet
    } else {
        Termination::MaxIter
    };

    while termination == Termination::MaxIter && iterations < cfg.max_iter {
        let steer_out = steer(&state.eval, &h, mu, cfg)?;
        qp_fallbacks += steer_out.qp_fallbacks;
        mu = steer_out.mu;
        let pen = state.eval.penalty(mu);
        let mut d = steer_out.d;
        let mut dphi0 = dot(&pen.grad, &d);
        if !(dphi0 < 0.0) {
            d = scale(&h.apply(&pen.grad)?, -1.0);
            dphi0 = dot(&pen.grad, &d);
        }
        let first = match armijo_wolfe(problem, &state.x, &d, pen.phi, dphi0, mu, cfg) {
            Ok(ls) => Some(ls),
            Err(LineSearchError::Solver(e)) => return Err(e),
            Err(err) => match null_steps(
                problem,
                &mut history,
                history_len,
                &state,
                pen.phi,
                &pen.grad,
                &h,
                mu,
                cfg,
                err,
            )? {
                Some((ls, slope)) => {
                    dphi0 = slope;
                    Some(ls)
                }
                None => None,
            },
        };
        let ls = match first {
            Some(ls) => ls,
            None => {
                // μ may have changed during steering; re-check at the current point
                let (stat, near) = stationarity(&history, &state.x, &state.eval, &h, mu, cfg)?;
                state.stationarity = stat;
                if converged(&state) {
                    certificate_inputs = Some(near);
                    termination = Termination::ToleranceMet;
                } else {
                    termination = Termination::LineSearchFailure;
                }
                break;
            }
        };
        iterations += 1;
        let s = sub(&ls.x, &state.x);
        let y = sub(&ls.penalty.grad, &pen.grad);
        h.update(&s, &y)?;

        push_sample(&mut history, history_len, GradientSample::new(&ls.x, &ls.eval));
        let (stat, near) = stationarity(&history, &ls.x, &ls.eval, &h, mu, cfg)?;
        state = State {
            x: ls.x,
            eval: ls.eval,
            stationarity: stat,
        };
        if screens_better(
            state.eval.f,
            state.eval.violation(),
            best.f,
            best.violation,
            cfg.tau_violation,
        ) {
            best = state.as_best(iterations);
        }
        if cfg.record_trajectory {
            trajectory.push(IterationRecord {
                iter: iterations,
                f: state.eval.f,
                violation: ls.penalty.violation,
                mu,
                step: ls.t,
                phi: ls.penalty.phi,
                stationarity: stat,
                phi_start: pen.phi,
                dphi_start: dphi0,
                dphi_end: ls.dphi,
                steering_shrinks: steer_out.shrinks,
                x: cfg.record_iterates.then(|| state.x.clone()),
            });
        }
        if converged(&state) {
            certificate_inputs = Some(near);
            termination = Termination::ToleranceMet;
        }
    }

    let certificate = match (termination, certificate_inputs) {
        (Termination::ToleranceMet, Some(history)) => Some(StationarityCertificate {
            history,
            ineq: state.eval.ineq.clone(),
            eq: state.eval.eq.clone(),
            h: h.clone(),
            mu,
        }),
        _ => None,
    };
    let (x_star, f_star, violation, stat) = if termination == Termination::LineSearchFailure {
        (best.x.clone(), best.f, best.violation, best.stationarity)
    } else {
        let v = state.eval.violation();
        (state.x, state.eval.f, v, state.stationarity)
    };
    Ok(SolverReport {
        x_star,
        f_star,
        violation,
        stationarity: stat,
        termination,
        iterations,
        mu,
        trajectory,
        best,
        certificate,
        qp_fallbacks,
        wall_time: start.elapsed(),
    })
}
