use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::stationarity::StationarityCertificate;
use super::SolverError;
use crate::numerics::HessianMode;
use crate::qp::{DEFAULT_QP_MAX_ITER, DEFAULT_QP_TOL};

/// Solver parameters. Defaults: `μ₀ = 1`, `c_v = 0.9`, `c_μ = 0.5`,
/// stationarity and violation tolerances `10⁻²`, weak-Wolfe constants
/// `(10⁻⁴, 0.5)` with 50 bisections, full BFGS from `H₀ = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub mu0: f64,
    /// Required fraction of the best achievable predicted violation reduction.
    pub c_v: f64,
    /// Penalty shrink factor used by steering.
    pub c_mu: f64,
    pub tau_stationarity: f64,
    pub tau_violation: f64,
    pub max_iter: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_bisections: usize,
    pub max_expansions: usize,
    /// Gradient-history length `l` for the stationarity QP. `None` picks
    /// `min(100, 2n, n + 10)`.
    pub grad_history: Option<usize>,
    /// Only gradients evaluated within this distance of the current iterate
    /// enter the stationarity QP.
    pub eval_dist: f64,
    pub hessian: HessianMode,
    pub h0_scaling: bool,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub max_steering_shrinks: usize,
    pub record_trajectory: bool,
    /// Store every iterate in the trajectory (needed for replay checks).
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            c_v: 0.9,
            c_mu: 0.5,
            tau_stationarity: 1e-2,
            tau_violation: 1e-2,
            max_iter: 1000,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.5,
            max_bisections: 50,
            max_expansions: 50,
            grad_history: None,
            eval_dist: 1e-4,
            hessian: HessianMode::Full,
            h0_scaling: false,
            qp_tol: DEFAULT_QP_TOL,
            qp_max_iter: DEFAULT_QP_MAX_ITER,
            max_steering_shrinks: 30,
            record_trajectory: false,
            record_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(SolverError::InvalidConfig("mu0 must be positive"));
        }
        if !open_unit(self.c_v) {
            return Err(SolverError::InvalidConfig("c_v must lie in (0, 1)"));
        }
        if !open_unit(self.c_mu) {
            return Err(SolverError::InvalidConfig("c_mu must lie in (0, 1)"));
        }
        if !(self.wolfe_c1 > 0.0 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(SolverError::InvalidConfig("need 0 < wolfe_c1 < wolfe_c2 < 1"));
        }
        if !(self.tau_stationarity > 0.0 && self.tau_violation > 0.0 && self.qp_tol > 0.0) {
            return Err(SolverError::InvalidConfig("tolerances must be positive"));
        }
        if !(self.eval_dist > 0.0) {
            return Err(SolverError::InvalidConfig("eval_dist must be positive"));
        }
        if self.grad_history == Some(0) {
            return Err(SolverError::InvalidConfig("grad_history must be at least 1"));
        }
        if let HessianMode::Limited { memory: 0 } = self.hessian {
            return Err(SolverError::InvalidConfig("limited-memory size must be at least 1"));
        }
        Ok(())
    }

    pub fn history_len(&self, dim: usize) -> usize {
        self.grad_history
            .unwrap_or_else(|| 100.min(2 * dim).min(dim + 10))
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ToleranceMet,
    MaxIter,
    LineSearchFailure,
}

/// One accepted iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iter: usize,
    pub f: f64,
    pub violation: f64,
    pub mu: f64,
    pub step: f64,
    pub phi: f64,
    pub stationarity: f64,
    /// `φ` and its directional derivative at the start of the line search,
    /// and the directional derivative at the accepted point. Enough to
    /// re-check both Wolfe conditions.
    pub phi_start: f64,
    pub dphi_start: f64,
    pub dphi_end: f64,
    pub steering_shrinks: usize,
    pub x: Option<Vec<f64>>,
}

/// Iterate kept by the screening rule: lowest objective among points with
/// `v ≤ τ_v`, otherwise lowest violation.
#[derive(Debug, Clone, PartialEq)]
pub struct BestIterate {
    pub x: Vec<f64>,
    pub f: f64,
    pub violation: f64,
    pub stationarity: f64,
    pub iter: usize,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub violation: f64,
    pub stationarity: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub mu: f64,
    pub trajectory: Vec<IterationRecord>,
    pub best: BestIterate,
    /// Inputs of the final stationarity QP when the tolerance test passed,
    /// so the result can be re-certified independently.
    pub certificate: Option<StationarityCertificate>,
    pub qp_fallbacks: usize,
    pub wall_time: Duration,
}

impl SolverReport {
    pub fn is_feasible(&self, tau_violation: f64) -> bool {
        self.violation <= tau_violation
    }
}
