//! `min_θ g(θ)`, `g(θ) = max_{−1 ≤ x′ ≤ 1} max(θx′, 0)²`.
//!
//! At `θ = 1` the inner problem has the global maximizer `x′ = 1` and the
//! stationary point `x′ = 0`. Differentiating at the stationary point gives
//! the zero direction, so an outer subgradient method cannot move.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolution {
    /// `x′ = 0`
    StationaryZero,
    /// `x′ = 1`
    GlobalOne,
}

impl InnerSolution {
    pub fn point(self) -> f64 {
        match self {
            InnerSolution::StationaryZero => 0.0,
            InnerSolution::GlobalOne => 1.0,
        }
    }
}

fn inner_value(theta: f64, x: f64) -> f64 {
    (theta * x).max(0.0).powi(2)
}

/// `∂/∂θ max(θx′, 0)² = 2·max(θx′, 0)·x′` at the chosen inner point.
pub fn danskin_example(theta: f64, inner: InnerSolution) -> f64 {
    let x = inner.point();
    2.0 * (theta * x).max(0.0) * x
}

/// `g(θ) = θ²`: for `θ < 0` the maximizer is `x′ = −1`.
pub fn danskin_objective(theta: f64) -> f64 {
    inner_value(theta, danskin_global_maximizer(theta))
}

/// `sign(θ)`, with `x′ = 1` at `θ = 0`.
pub fn danskin_global_maximizer(theta: f64) -> f64 {
    if theta < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Subgradient of `g` taken at the true inner maximizer, `2θ`.
pub fn danskin_global_subgradient(theta: f64) -> f64 {
    let x = danskin_global_maximizer(theta);
    2.0 * (theta * x).max(0.0) * x
}

/// One outer step `θ ← θ − lr·∂` with the subgradient from `inner`.
/// Returns `(θ_new, g(θ_new))`.
pub fn danskin_step(theta: f64, inner: InnerSolution, lr: f64) -> (f64, f64) {
    let next = theta - lr * danskin_example(theta, inner);
    (next, danskin_objective(next))
}
