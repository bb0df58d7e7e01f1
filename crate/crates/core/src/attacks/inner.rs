//! Inner maximizers for adversarial training.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::builders::build_max_loss;
use super::pgd::{pgd_baseline, PgdConfig};
use super::{AttackError, AttackSpec, Formulation};
use crate::model::{Classifier, InnerMaximizer, ModelError};
use crate::penalty_sqp::{solve, SolverConfig};

fn to_model_error(e: AttackError) -> ModelError {
    match e {
        AttackError::Model(m) => m,
        other => ModelError::Inner(other.to_string()),
    }
}

/// PGD inner maximizer. Returns the highest-loss iterate, so more steps
/// never lower the achieved inner loss. `ε = 0` returns the clean point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdInner {
    pub spec: AttackSpec,
    pub pgd: PgdConfig,
}

impl PgdInner {
    /// 10 steps by default.
    pub fn new(spec: AttackSpec) -> Self {
        Self {
            spec,
            pgd: PgdConfig {
                steps: 10,
                ..PgdConfig::default()
            },
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.pgd.steps = steps;
        self
    }
}

impl InnerMaximizer for PgdInner {
    fn maximize(&self, model: &Classifier, x: &[f64], y: usize, _seed: u64) -> Result<Vec<f64>, ModelError> {
        if self.spec.eps == 0.0 || self.pgd.steps == 0 {
            return Ok(x.to_vec());
        }
        let run = pgd_baseline(model, x, y, &self.spec, &self.pgd).map_err(to_model_error)?;
        Ok(run.iterates[run.best_by_loss()].clone())
    }
}

/// Penalty-SQP inner maximizer with a small iteration budget, started at
/// `x` plus seeded uniform noise. Falls back to `x` when the solve ends
/// infeasible.
#[derive(Debug, Clone, PartialEq)]
pub struct PwcfInner {
    pub spec: AttackSpec,
    pub solver: SolverConfig,
    pub init_noise_scale: f64,
}

impl PwcfInner {
    /// 10 iterations by default.
    pub fn new(spec: AttackSpec) -> Self {
        Self {
            spec,
            solver: SolverConfig {
                max_iter: 10,
                ..SolverConfig::default()
            },
            init_noise_scale: 1e-2,
        }
    }
}

impl InnerMaximizer for PwcfInner {
    fn maximize(&self, model: &Classifier, x: &[f64], y: usize, seed: u64) -> Result<Vec<f64>, ModelError> {
        if self.spec.formulation != Formulation::MaxLoss {
            return Err(ModelError::Inner("inner spec must be max-loss".into()));
        }
        if self.spec.eps == 0.0 || self.solver.max_iter == 0 {
            return Ok(x.to_vec());
        }
        let ap = build_max_loss(Arc::new(model.clone()), x, y, &self.spec).map_err(to_model_error)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.init_noise_scale;
        let x0: Vec<f64> = x
            .iter()
            .map(|v| (v + if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 }).clamp(0.0, 1.0))
            .collect();
        let report = solve(&ap.problem, &x0, &self.solver).map_err(|e| to_model_error(e.into()))?;
        if report.best.violation <= self.solver.tau_violation {
            Ok(report.best.x)
        } else {
            Ok(x.to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::Metric;
    use crate::folding::{ClippedLoss, LossKind};
    use crate::model::{cross_entropy, Activation};

    #[test]
    fn zero_budget_is_identity() {
        let m = Classifier::random(&[2, 6, 3], Activation::Tanh, 2).unwrap();
        let mut spec = AttackSpec::max_loss(Metric::Linf, 0.1, ClippedLoss::unclipped(LossKind::CrossEntropy));
        spec.eps = 0.0;
        assert_eq!(
            PgdInner::new(spec).maximize(&m, &[0.3, 0.4], 1, 0).unwrap(),
            vec![0.3, 0.4]
        );
        assert_eq!(
            PwcfInner::new(spec).maximize(&m, &[0.3, 0.4], 1, 0).unwrap(),
            vec![0.3, 0.4]
        );
    }

    #[test]
    fn inner_points_raise_loss_within_budget() {
        let m = Classifier::random(&[2, 6, 3], Activation::Tanh, 2).unwrap();
        let spec = AttackSpec::max_loss(Metric::Linf, 0.1, ClippedLoss::unclipped(LossKind::CrossEntropy));
        let x = [0.3, 0.4];
        let clean = cross_entropy(&m.forward(&x).unwrap(), 1).unwrap().0;
        for xp in [
            PgdInner::new(spec).maximize(&m, &x, 1, 7).unwrap(),
            PwcfInner::new(spec).maximize(&m, &x, 1, 7).unwrap(),
        ] {
            let l = cross_entropy(&m.forward(&xp).unwrap(), 1).unwrap().0;
            assert!(l >= clean, "{l} < {clean}");
            assert!(xp.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.1 + 1e-2));
        }
    }
}
