//! Euclidean projections onto the simple convex sets used by the solver
//! and the PGD baseline.

use serde::{Deserialize, Serialize};

use super::QpError;
use crate::numerics::linalg::{all_finite, norm1, norm2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionSet {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    L1Ball {
        radius: f64,
    },
    L2Ball {
        radius: f64,
    },
    LinfBall {
        radius: f64,
    },
    /// `{σ ≥ 0, Σσ = total}`
    ScaledSimplex {
        total: f64,
    },
}

pub fn project(set: &ProjectionSet, v: &[f64]) -> Result<Vec<f64>, QpError> {
    if !all_finite(v) {
        return Err(QpError::NonFinite);
    }
    match set {
        ProjectionSet::Box { lower, upper } => {
            if lower.len() != v.len() || upper.len() != v.len() {
                return Err(QpError::Dimension);
            }
            if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                return Err(QpError::InvalidSet("box lower bound exceeds upper bound"));
            }
            Ok(v.iter()
                .zip(lower.iter().zip(upper))
                .map(|(x, (l, u))| x.clamp(*l, *u))
                .collect())
        }
        ProjectionSet::L1Ball { radius } => {
            check_radius(*radius)?;
            Ok(project_l1_ball(v, *radius))
        }
        ProjectionSet::L2Ball { radius } => {
            check_radius(*radius)?;
            Ok(project_l2_ball(v, *radius))
        }
        ProjectionSet::LinfBall { radius } => {
            check_radius(*radius)?;
            Ok(v.iter().map(|x| x.clamp(-radius, *radius)).collect())
        }
        ProjectionSet::ScaledSimplex { total } => {
            if !(*total >= 0.0) || !total.is_finite() {
                return Err(QpError::InvalidSet("simplex total must be non-negative"));
            }
            let mut out = v.to_vec();
            project_simplex_in_place(&mut out, *total);
            Ok(out)
        }
    }
}

fn check_radius(r: f64) -> Result<(), QpError> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(QpError::InvalidSet("ball radius must be positive"))
    }
}

pub(crate) fn project_l2_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let n = norm2(v);
    if n <= radius {
        v.to_vec()
    } else {
        let s = radius / n;
        v.iter().map(|x| x * s).collect()
    }
}

pub(crate) fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    if norm1(v) <= radius {
        return v.to_vec();
    }
    let mut mag: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    project_simplex_in_place(&mut mag, radius);
    mag.iter().zip(v).map(|(m, x)| if *x < 0.0 { -m } else { *m }).collect()
}

/// Sort-based projection onto `{σ ≥ 0, Σσ = total}`. Sorting is by value
/// (descending) with index as the tie-breaker so the threshold is
/// reproducible.
pub(crate) fn project_simplex_in_place(v: &mut [f64], total: f64) {
    let n = v.len();
    if n == 0 {
        return;
    }
    if total == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        cumulative += v[idx];
        let candidate = (cumulative - total) / (k + 1) as f64;
        if v[idx] - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// One-dimensional projector for `{|δ| ≤ ε, x + δ ∈ [0, 1]}`: clamp `w`
/// into `[max(−x, −ε), min(1 − x, ε)]`.
pub fn project_linf_box(x: f64, eps: f64, w: f64) -> Result<f64, QpError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(QpError::OutOfBox(x));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(QpError::InvalidSet("ball radius must be positive"));
    }
    if !w.is_finite() {
        return Err(QpError::NonFinite);
    }
    let lo = (-x).max(-eps);
    let hi = (1.0 - x).min(eps);
    Ok(w.clamp(lo, hi))
}
