//! Vanilla projected gradient ascent on the max-loss form:
//! `x′ ← P_Δ(x)(x′ + γ∇ℓ(x′))`, started at the clean point.

use serde::{Deserialize, Serialize};

use super::builders::{check_inputs, clipped_loss_with_grad};
use super::{AttackError, AttackSpec, Formulation, Metric};
use crate::model::Classifier;
use crate::numerics::linalg::{norm1, norm2, norm_inf, sub};
use crate::qp::{project_l1_ball, project_l2_ball, project_linf_box};

/// Feasibility slack allowed after projection.
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdConfig {
    pub steps: usize,
    /// `γ`. Multiplied by `ε` when `relative_step` is set.
    pub step_size: f64,
    pub relative_step: bool,
    /// Divide the gradient by its ℓ2 norm before stepping.
    pub normalize: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.25,
            relative_step: true,
            normalize: true,
        }
    }
}

impl PgdConfig {
    /// Plain update with a fixed absolute step.
    pub fn raw(steps: usize, step_size: f64) -> Self {
        Self {
            steps,
            step_size,
            relative_step: false,
            normalize: false,
        }
    }
}

/// All iterates, starting with the clean point, with their clipped losses
/// and margins.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdRun {
    pub iterates: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub margins: Vec<f64>,
}

impl PgdRun {
    /// Earliest iterate with the largest margin.
    pub fn best_by_margin(&self) -> usize {
        first_argmax(&self.margins)
    }

    /// Earliest iterate with the largest loss.
    pub fn best_by_loss(&self) -> usize {
        first_argmax(&self.losses)
    }

    pub fn final_point(&self) -> &[f64] {
        self.iterates.last().expect("clean point always recorded")
    }
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Projection of `v` onto `{x′ ∈ [0, 1]ⁿ : ‖x′ − x‖ ≤ ε}`: exact for ℓ∞,
/// ball-after-box for ℓ2 and box-after-ball for ℓ1.
pub fn pgd_project(x: &[f64], v: &[f64], metric: Metric, eps: f64) -> Result<Vec<f64>, AttackError> {
    if x.len() != v.len() {
        return Err(AttackError::Spec("point and center differ in length"));
    }
    let clamp_box = |d: &[f64]| -> Vec<f64> { x.iter().zip(d).map(|(xi, di)| (xi + di).clamp(0.0, 1.0)).collect() };
    let delta = sub(v, x);
    let out = match metric {
        Metric::Linf => x
            .iter()
            .zip(&delta)
            .map(|(xi, di)| project_linf_box(*xi, eps, *di).map(|d| xi + d))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| AttackError::Spec("invalid ℓ∞ projection input"))?,
        Metric::Lp { p: 2.0 } => {
            let boxed = sub(&clamp_box(&delta), x);
            let d = project_l2_ball(&boxed, eps);
            x.iter().zip(&d).map(|(a, b)| a + b).collect()
        }
        Metric::Lp { p: 1.0 } => clamp_box(&project_l1_ball(&delta, eps)),
        m => {
            return Err(AttackError::NotApplicable {
                formulation: Formulation::MaxLoss,
                metric: format!("{m} (no PGD projector)"),
            })
        }
    };
    debug_assert!(is_feasible(x, &out, metric, eps));
    Ok(out)
}

fn is_feasible(x: &[f64], xp: &[f64], metric: Metric, eps: f64) -> bool {
    let d = sub(xp, x);
    let r = match metric {
        Metric::Linf => norm_inf(&d),
        Metric::Lp { p: 1.0 } => norm1(&d),
        _ => norm2(&d),
    };
    r <= eps + FEAS_TOL && xp.iter().all(|v| (-FEAS_TOL..=1.0 + FEAS_TOL).contains(v))
}

/// Runs `cfg.steps` projected ascent steps on `spec.loss` from `x′ = x`.
pub fn pgd_baseline(
    model: &Classifier,
    x: &[f64],
    y: usize,
    spec: &AttackSpec,
    cfg: &PgdConfig,
) -> Result<PgdRun, AttackError> {
    if spec.formulation != Formulation::MaxLoss {
        return Err(AttackError::NotApplicable {
            formulation: spec.formulation,
            metric: spec.metric.to_string(),
        });
    }
    check_inputs(model, x, y, spec)?;
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return Err(AttackError::Spec("PGD step size must be finite and non-negative"));
    }
    // reject unsupported metrics before any work
    pgd_project(x, x, spec.metric, spec.eps)?;
    let gamma = if cfg.relative_step {
        cfg.step_size * spec.eps
    } else {
        cfg.step_size
    };
    let mut run = PgdRun {
        iterates: Vec::with_capacity(cfg.steps + 1),
        losses: Vec::with_capacity(cfg.steps + 1),
        margins: Vec::with_capacity(cfg.steps + 1),
    };
    let mut xp = x.to_vec();
    for step in 0..=cfg.steps {
        let (loss, g, margin) = clipped_loss_with_grad(model, &xp, y, &spec.loss)?;
        run.iterates.push(xp.clone());
        run.losses.push(loss);
        run.margins.push(margin);
        if step == cfg.steps {
            break;
        }
        let scale = if cfg.normalize {
            let n = norm2(&g);
            if n > 0.0 {
                gamma / n
            } else {
                0.0
            }
        } else {
            gamma
        };
        let v: Vec<f64> = xp.iter().zip(&g).map(|(a, gi)| a + scale * gi).collect();
        xp = pgd_project(x, &v, spec.metric, spec.eps)?;
        if !is_feasible(x, &xp, spec.metric, spec.eps) {
            return Err(AttackError::Spec("projection produced an infeasible iterate"));
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folding::ClippedLoss;
    use crate::model::{Activation, Layer};
    use crate::numerics::Matrix;

    #[test]
    fn linf_projector_arithmetic() {
        let xp = pgd_project(&[0.5], &[1.5], Metric::Linf, 0.2).unwrap();
        assert!((xp[0] - 0.7).abs() < 1e-15);
        let xp = pgd_project(&[0.95, 0.02], &[1.2, -0.5], Metric::Linf, 0.2).unwrap();
        assert_eq!(xp, vec![1.0, 0.0]);
    }

    #[test]
    fn one_dimensional_ascent_step() {
        // logits (x, 0): the margin for class 1 is x, gradient +1
        let layer = Layer::new(Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(), vec![0.0, 0.0]).unwrap();
        let m = Classifier::from_layers(vec![layer], Activation::Identity).unwrap();
        let spec = AttackSpec::max_loss(
            Metric::Linf,
            0.2,
            ClippedLoss::unclipped(crate::folding::LossKind::Margin),
        );
        let run = pgd_baseline(&m, &[0.5], 1, &spec, &PgdConfig::raw(1, 1.0)).unwrap();
        assert!((run.final_point()[0] - 0.7).abs() < 1e-15);
        let still = pgd_baseline(&m, &[0.5], 1, &spec, &PgdConfig::raw(5, 0.0)).unwrap();
        assert!(still.iterates.iter().all(|p| p == &vec![0.5]));
    }

    #[test]
    fn unsupported_metric_rejected() {
        let m = Classifier::random(&[2, 4, 3], Activation::Tanh, 0).unwrap();
        let spec = AttackSpec::max_loss(Metric::lp(1.5), 0.1, ClippedLoss::margin());
        assert!(matches!(
            pgd_baseline(&m, &[0.2, 0.3], 0, &spec, &PgdConfig::default()),
            Err(AttackError::NotApplicable { .. })
        ));
    }

    #[test]
    fn iterates_stay_feasible() {
        let m = Classifier::random(&[2, 8, 3], Activation::Tanh, 5).unwrap();
        for metric in [Metric::L1, Metric::L2, Metric::Linf] {
            let spec = AttackSpec::max_loss(
                metric,
                0.3,
                ClippedLoss::unclipped(crate::folding::LossKind::CrossEntropy),
            );
            let x = [0.05, 0.9];
            let run = pgd_baseline(&m, &x, 0, &spec, &PgdConfig::raw(40, 0.5)).unwrap();
            assert_eq!(run.iterates.len(), 41);
            for p in &run.iterates {
                assert!(is_feasible(&x, p, metric, 0.3), "{metric}: {p:?}");
            }
        }
    }
}
