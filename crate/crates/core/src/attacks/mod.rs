//! Max-loss and min-radius attack problems, the two-stage restart driver,
//! a PGD baseline and the per-sample attack harness.

mod builders;
mod distance;
mod harness;
mod inner;
mod pgd;
mod two_stage;

pub use builders::{build_max_loss, build_min_radius, AttackProblem, RADIUS_INIT_MARGIN};
pub use distance::{lp_distance, lp_norm_with_grad, perceptual_distance, perceptual_from_features, InnerNorm};
pub use harness::{
    attack_sample, attack_samples, sample_seed, sparsity_of, HarnessConfig, PerturbationRecord, SolverChoice, SolverTag,
};
pub use inner::{PgdInner, PwcfInner};
pub use pgd::{pgd_baseline, pgd_project, PgdConfig, PgdRun};
pub use two_stage::{screen, two_stage_solve, TwoStageConfig, TwoStageResult};

pub use crate::model::margin_loss;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::folding::{Aggregator, ClippedLoss, FoldError, LossKind};
use crate::model::ModelError;
use crate::penalty_sqp::SolverError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    Spec(&'static str),
    #[error("{formulation:?} with metric {metric} is not supported")]
    NotApplicable { formulation: Formulation, metric: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Fold(#[from] FoldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    MaxLoss,
    MinRadius,
}

/// Perturbation distance. `Lp` covers every finite `p ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Lp { p: f64 },
    Linf,
    Perceptual { inner: InnerNorm },
}

impl Metric {
    pub const L1: Metric = Metric::Lp { p: 1.0 };
    pub const L2: Metric = Metric::Lp { p: 2.0 };

    /// `p = ∞` maps to [`Metric::Linf`].
    pub fn lp(p: f64) -> Self {
        if p.is_infinite() {
            Metric::Linf
        } else {
            Metric::Lp { p }
        }
    }

    /// Exponent for norm metrics, `None` for perceptual.
    pub fn p(&self) -> Option<f64> {
        match self {
            Metric::Lp { p } => Some(*p),
            Metric::Linf => Some(f64::INFINITY),
            Metric::Perceptual { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        match self {
            Metric::Lp { p } if !(*p >= 1.0 && p.is_finite()) => {
                Err(AttackError::Spec("p must be a finite number ≥ 1"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Lp { p } => write!(f, "l{p}"),
            Metric::Linf => write!(f, "linf"),
            Metric::Perceptual { inner: InnerNorm::L1 } => write!(f, "pd_l1"),
            Metric::Perceptual { inner: InnerNorm::L2 } => write!(f, "pd_l2"),
        }
    }
}

impl FromStr for Metric {
    type Err = AttackError;

    /// Accepts `l1`, `l2`, `l1.5`, `l8`, `linf`, `pd_l1`, `pd_l2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let m = match s {
            "linf" | "l_inf" => Metric::Linf,
            "pd_l1" => Metric::Perceptual { inner: InnerNorm::L1 },
            "pd_l2" => Metric::Perceptual { inner: InnerNorm::L2 },
            _ => {
                let p: f64 = s
                    .strip_prefix('l')
                    .and_then(|r| r.parse().ok())
                    .ok_or(AttackError::Spec("unknown metric name"))?;
                Metric::lp(p)
            }
        };
        m.validate()?;
        Ok(m)
    }
}

/// How box, ℓ∞ and ℓ1-radius families enter the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FoldMode {
    Folded {
        aggregator: Aggregator,
    },
    /// One constraint per member.
    Unfolded,
}

impl Default for FoldMode {
    fn default() -> Self {
        FoldMode::Folded {
            aggregator: Aggregator::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub formulation: Formulation,
    pub metric: Metric,
    /// Budget; used by the max-loss form only.
    pub eps: f64,
    /// Used by the max-loss form only.
    pub loss: ClippedLoss,
    /// Multiply the ℓ∞ radius variable by `√n` in the min-radius objective.
    /// Only valid for ℓ∞ min-radius.
    pub rescale: bool,
    pub fold: FoldMode,
}

impl AttackSpec {
    pub fn max_loss(metric: Metric, eps: f64, loss: ClippedLoss) -> Self {
        Self {
            formulation: Formulation::MaxLoss,
            metric,
            eps,
            loss,
            rescale: false,
            fold: FoldMode::default(),
        }
    }

    pub fn min_radius(metric: Metric) -> Self {
        Self {
            formulation: Formulation::MinRadius,
            metric,
            eps: 0.0,
            loss: ClippedLoss::unclipped(LossKind::Margin),
            rescale: metric == Metric::Linf,
            fold: FoldMode::default(),
        }
    }

    pub fn with_fold(mut self, fold: FoldMode) -> Self {
        self.fold = fold;
        self
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        self.metric.validate()?;
        if self.formulation == Formulation::MaxLoss && !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(AttackError::Spec("max-loss needs a positive finite eps"));
        }
        if self.loss.clip_at.is_nan() {
            return Err(AttackError::Spec("clip level is NaN"));
        }
        Ok(())
    }

    pub fn loss_name(&self) -> &'static str {
        match (self.formulation, self.loss.base) {
            (Formulation::MinRadius, _) => "none",
            (_, LossKind::CrossEntropy) => "ce",
            (_, LossKind::Margin) => "margin",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names_round_trip() {
        for s in ["l1", "l2", "l1.5", "l8", "linf", "pd_l1", "pd_l2"] {
            let m: Metric = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("l1".parse::<Metric>().unwrap(), Metric::L1);
        assert!("l0.5".parse::<Metric>().is_err());
        assert!("q2".parse::<Metric>().is_err());
        assert_eq!(Metric::lp(f64::INFINITY), Metric::Linf);
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::max_loss(Metric::L2, 0.0, ClippedLoss::margin())
            .validate()
            .is_err());
        assert!(AttackSpec::max_loss(Metric::L2, 0.1, ClippedLoss::margin())
            .validate()
            .is_ok());
        assert!(AttackSpec::min_radius(Metric::Linf).validate().is_ok());
    }
}
