//! Augmented dual QP behind the stationarity estimate.
//!
//! Given the `l` most recent objective gradients `G` and, per constraint,
//! the matching gradient history `Jᵢ`, solve
//!
//! ```text
//! max  Σᵢ cᵢ·eᵀλᵢ − ½ ‖[G J₁ … Jₚ]·(σ; λ)‖²_H
//! s.t. eᵀσ = μ, σ ≥ 0,  lowᵢ ≤ λᵢ ≤ 1
//! ```
//!
//! and return `d⋄ = H·[G J₁ … Jₚ]·(σ; λ)`. Inequality multipliers live in
//! `[0, 1]`; equality multipliers in `[−1, 1]`.

use super::box_qp::{projected_gradient, DEFAULT_QP_MAX_ITER};
use super::projection::project_simplex_in_place;
use super::QpError;
use crate::numerics::linalg::{dot, norm2, Matrix};
use crate::numerics::InverseHessian;

#[derive(Debug, Clone)]
pub struct TerminationQp<'a> {
    /// Columns of `G`, oldest first.
    pub objective_gradients: Vec<Vec<f64>>,
    /// `constraint_gradients[i]` holds the columns of `Jᵢ`, aligned with
    /// `objective_gradients`.
    pub constraint_gradients: Vec<Vec<Vec<f64>>>,
    /// Constraint values at the current iterate.
    pub constraint_values: Vec<f64>,
    /// Lower multiplier bound per constraint (0 or −1).
    pub multiplier_lower: Vec<f64>,
    pub h: &'a InverseHessian,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminationSolution {
    pub sigma: Vec<f64>,
    /// One block of `l` multipliers per constraint.
    pub lambda: Vec<Vec<f64>>,
    pub d_diamond: Vec<f64>,
    /// `‖d⋄‖₂`
    pub stationarity: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
}

pub fn solve_termination_qp(tqp: &TerminationQp<'_>, tol: f64) -> Result<TerminationSolution, QpError> {
    solve_termination_qp_with(tqp, tol, DEFAULT_QP_MAX_ITER)
}

pub fn solve_termination_qp_with(
    tqp: &TerminationQp<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<TerminationSolution, QpError> {
    if !(tqp.mu >= 0.0) || !tqp.mu.is_finite() {
        return Err(QpError::NegativePenalty(tqp.mu));
    }
    if !(tol > 0.0) {
        return Err(QpError::InvalidTolerance(tol));
    }
    let l = tqp.objective_gradients.len();
    let p = tqp.constraint_gradients.len();
    let n = tqp.h.dim();
    if l == 0 {
        return Err(QpError::EmptyHistory);
    }
    if tqp.constraint_values.len() != p || tqp.multiplier_lower.len() != p {
        return Err(QpError::Dimension);
    }
    let mut columns: Vec<&[f64]> = Vec::with_capacity(l * (1 + p));
    for g in &tqp.objective_gradients {
        columns.push(g);
    }
    for block in &tqp.constraint_gradients {
        if block.len() != l {
            return Err(QpError::Dimension);
        }
        for j in block {
            columns.push(j);
        }
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(QpError::Dimension);
    }

    let h_cols: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| tqp.h.apply(c))
        .collect::<Result<_, _>>()
        .map_err(|_| QpError::Dimension)?;
    let m = columns.len();
    let mut q = Matrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let v = dot(columns[a], &h_cols[b]);
            q[(a, b)] = v;
            q[(b, a)] = v;
        }
    }
    let mut lin = vec![0.0; m];
    for (i, c) in tqp.constraint_values.iter().enumerate() {
        for k in 0..l {
            lin[l + i * l + k] = -c;
        }
    }

    let lower = &tqp.multiplier_lower;
    let mu = tqp.mu;
    let project = |z: &mut [f64]| {
        project_simplex_in_place(&mut z[..l], mu);
        for i in 0..p {
            for v in &mut z[l + i * l..l + (i + 1) * l] {
                *v = v.clamp(lower[i], 1.0);
            }
        }
    };
    let mut z0 = vec![0.0; m];
    for s in &mut z0[..l] {
        *s = mu / l as f64;
    }
    project(&mut z0);
    let run = projected_gradient(&q, &lin, z0, project, None, tol, max_iter);

    let mut d = vec![0.0; n];
    for (zk, hc) in run.x.iter().zip(&h_cols) {
        if *zk != 0.0 {
            for (di, hi) in d.iter_mut().zip(hc) {
                *di += zk * hi;
            }
        }
    }
    let sigma = run.x[..l].to_vec();
    let lambda = (0..p).map(|i| run.x[l + i * l..l + (i + 1) * l].to_vec()).collect();
    Ok(TerminationSolution {
        sigma,
        lambda,
        stationarity: norm2(&d),
        d_diamond: d,
        iterations: run.iterations,
        kkt_residual: run.residual,
        converged: run.converged,
    })
}
