//! Problem definition: objective and constraint oracles, and the exact
//! penalty bookkeeping built from one evaluation of all of them.

use std::fmt;
use std::sync::Arc;

use super::SolverError;
use crate::numerics::linalg::{all_finite, axpy, dot};

/// `x ↦ (value, gradient)`. Gradients at kinks may be any Clarke
/// subgradient, but the choice must be deterministic.
pub type Oracle = Arc<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync>;

/// `min f(x)  s.t.  cᵢ(x) ≤ 0, hⱼ(x) = 0`
#[derive(Clone)]
pub struct NonsmoothProblem {
    dim: usize,
    objective: Oracle,
    inequality: Vec<Oracle>,
    equality: Vec<Oracle>,
}

impl fmt::Debug for NonsmoothProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonsmoothProblem")
            .field("dim", &self.dim)
            .field("inequality", &self.inequality.len())
            .field("equality", &self.equality.len())
            .finish()
    }
}

impl NonsmoothProblem {
    pub fn new<F>(dim: usize, objective: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        Self {
            dim,
            objective: Arc::new(objective),
            inequality: Vec::new(),
            equality: Vec::new(),
        }
    }

    /// Adds `c(x) ≤ 0`.
    pub fn with_inequality<F>(mut self, c: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        self.inequality.push(Arc::new(c));
        self
    }

    /// Adds `h(x) = 0`.
    pub fn with_equality<F>(mut self, h: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        self.equality.push(Arc::new(h));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_inequality(&self) -> usize {
        self.inequality.len()
    }

    pub fn num_equality(&self) -> usize {
        self.equality.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.inequality.len() + self.equality.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation, SolverError> {
        if x.len() != self.dim {
            return Err(SolverError::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        let call = |oracle: &Oracle, what: &'static str| -> Result<(f64, Vec<f64>), SolverError> {
            let (v, g) = oracle(x);
            if g.len() != self.dim {
                return Err(SolverError::Dimension {
                    expected: self.dim,
                    found: g.len(),
                });
            }
            if !v.is_finite() || !all_finite(&g) {
                return Err(SolverError::Oracle(what));
            }
            Ok((v, g))
        };
        let (f, grad_f) = call(&self.objective, "objective")?;
        let mut ineq = Vec::with_capacity(self.inequality.len());
        let mut ineq_grads = Vec::with_capacity(self.inequality.len());
        for c in &self.inequality {
            let (v, g) = call(c, "inequality constraint")?;
            ineq.push(v);
            ineq_grads.push(g);
        }
        let mut eq = Vec::with_capacity(self.equality.len());
        let mut eq_grads = Vec::with_capacity(self.equality.len());
        for h in &self.equality {
            let (v, g) = call(h, "equality constraint")?;
            eq.push(v);
            eq_grads.push(g);
        }
        Ok(Evaluation {
            f,
            grad_f,
            ineq,
            ineq_grads,
            eq,
            eq_grads,
        })
    }
}

/// Values and gradients of every oracle at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub grad_f: Vec<f64>,
    pub ineq: Vec<f64>,
    pub ineq_grads: Vec<Vec<f64>>,
    pub eq: Vec<f64>,
    pub eq_grads: Vec<Vec<f64>>,
}

/// `φ = μf + v` together with a subgradient and the violation `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyValue {
    pub phi: f64,
    pub grad: Vec<f64>,
    pub violation: f64,
}

impl Evaluation {
    pub fn dim(&self) -> usize {
        self.grad_f.len()
    }

    /// `Σ max{cᵢ, 0} + Σ |hⱼ|`
    pub fn violation(&self) -> f64 {
        self.ineq.iter().map(|c| c.max(0.0)).sum::<f64>() + self.eq.iter().map(|h| h.abs()).sum::<f64>()
    }

    /// Exact penalty at `mu`. Subgradient choice: `cᵢ = 0` counts as
    /// inactive and `hⱼ = 0` contributes nothing.
    pub fn penalty(&self, mu: f64) -> PenaltyValue {
        let mut grad: Vec<f64> = self.grad_f.iter().map(|g| mu * g).collect();
        for (c, g) in self.ineq.iter().zip(&self.ineq_grads) {
            if *c > 0.0 {
                axpy(1.0, g, &mut grad);
            }
        }
        for (h, g) in self.eq.iter().zip(&self.eq_grads) {
            if *h != 0.0 {
                axpy(h.signum(), g, &mut grad);
            }
        }
        let violation = self.violation();
        PenaltyValue {
            phi: mu * self.f + violation,
            grad,
            violation,
        }
    }

    /// Linearized violation `Σ max{cᵢ + ∇cᵢᵀd, 0} + Σ |hⱼ + ∇hⱼᵀd|`.
    pub fn linear_violation(&self, d: &[f64]) -> f64 {
        let ineq: f64 = self
            .ineq
            .iter()
            .zip(&self.ineq_grads)
            .map(|(c, g)| (c + dot(g, d)).max(0.0))
            .sum();
        let eq: f64 = self
            .eq
            .iter()
            .zip(&self.eq_grads)
            .map(|(h, g)| (h + dot(g, d)).abs())
            .sum();
        ineq + eq
    }

    /// Constraint values, inequalities first.
    pub fn constraint_values(&self) -> Vec<f64> {
        self.ineq.iter().chain(&self.eq).copied().collect()
    }

    /// Constraint gradients, inequalities first.
    pub fn constraint_gradients(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.ineq_grads.iter().chain(&self.eq_grads)
    }

    /// Lower bounds on the dual multipliers: 0 for inequalities, −1 for
    /// equalities.
    pub fn multiplier_lower(&self) -> Vec<f64> {
        std::iter::repeat_n(0.0, self.ineq.len())
            .chain(std::iter::repeat_n(-1.0, self.eq.len()))
            .collect()
    }
}

pub fn penalty_eval(problem: &NonsmoothProblem, x: &[f64], mu: f64) -> Result<PenaltyValue, SolverError> {
    if !(mu >= 0.0) {
        return Err(SolverError::InvalidConfig("penalty parameter must be non-negative"));
    }
    Ok(problem.evaluate(x)?.penalty(mu))
}

pub fn linear_violation_model(problem: &NonsmoothProblem, x: &[f64], d: &[f64]) -> Result<f64, SolverError> {
    if d.len() != problem.dim() {
        return Err(SolverError::Dimension {
            expected: problem.dim(),
            found: d.len(),
        });
    }
    Ok(problem.evaluate(x)?.linear_violation(d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_with_upper_bound() -> NonsmoothProblem {
        NonsmoothProblem::new(1, |x| (x[0] * x[0], vec![2.0 * x[0]])).with_inequality(|x| (x[0] - 1.0, vec![1.0]))
    }

    #[test]
    fn penalty_infeasible_point() {
        let p = penalty_eval(&square_with_upper_bound(), &[2.0], 0.5).unwrap();
        assert_eq!(p.phi, 3.0);
        assert_eq!(p.violation, 1.0);
        assert_eq!(p.grad, vec![0.5 * 4.0 + 1.0]);
    }

    #[test]
    fn penalty_feasible_point() {
        let p = penalty_eval(&square_with_upper_bound(), &[0.5], 0.5).unwrap();
        assert_eq!(p.phi, 0.125);
        assert_eq!(p.violation, 0.0);
    }

    #[test]
    fn penalty_equality() {
        let prob = NonsmoothProblem::new(1, |_| (0.0, vec![0.0])).with_equality(|x| (x[0], vec![1.0]));
        let p = penalty_eval(&prob, &[-0.2], 0.0).unwrap();
        assert!((p.phi - 0.2).abs() < 1e-15 && (p.violation - 0.2).abs() < 1e-15);
        assert_eq!(p.grad, vec![-1.0]);
        // h = 0 contributes no subgradient
        assert_eq!(penalty_eval(&prob, &[0.0], 0.0).unwrap().grad, vec![0.0]);
    }

    #[test]
    fn kink_convention_for_active_inequality() {
        let p = penalty_eval(&square_with_upper_bound(), &[1.0], 1.0).unwrap();
        assert_eq!(p.grad, vec![2.0]);
    }

    #[test]
    fn linear_model_examples() {
        let prob = square_with_upper_bound();
        assert_eq!(linear_violation_model(&prob, &[2.0], &[-1.0]).unwrap(), 0.0);
        assert_eq!(linear_violation_model(&prob, &[2.0], &[0.0]).unwrap(), 1.0);
        let two = NonsmoothProblem::new(1, |_| (0.0, vec![0.0]))
            .with_inequality(|_| (0.5, vec![-0.2]))
            .with_inequality(|_| (-0.3, vec![0.1]));
        assert!((linear_violation_model(&two, &[0.0], &[1.0]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn oracle_failures_surface() {
        let bad = NonsmoothProblem::new(1, |_| (f64::NAN, vec![0.0]));
        assert!(matches!(bad.evaluate(&[0.0]), Err(SolverError::Oracle("objective"))));
        let wrong_dim = NonsmoothProblem::new(2, |_| (0.0, vec![0.0]));
        assert!(matches!(
            wrong_dim.evaluate(&[0.0, 0.0]),
            Err(SolverError::Dimension { .. })
        ));
        assert!(penalty_eval(&square_with_upper_bound(), &[0.0], -1.0).is_err());
    }
}
