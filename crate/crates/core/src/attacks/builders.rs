//! Problem builders for the max-loss and min-radius forms.
//!
//! Max-loss variables are `x′ ∈ ℝⁿ`. Min-radius variables are `x′` followed
//! by the radius block `t`: nothing for ℓp and perceptual distances, one
//! scalar for ℓ∞ and `n` entries for ℓ1.

use std::sync::Arc;

use super::distance::{lp_distance, perceptual_from_features};
use super::{AttackError, AttackSpec, FoldMode, Formulation, Metric};
use crate::folding::{
    box_fold, clip_loss, l1_radius_fold, linf_radius_fold, linf_rescale_factor, linf_to_box, ClippedLoss, LossKind,
};
use crate::model::{cross_entropy, margin_loss, runner_up, Classifier, ModelError};
use crate::penalty_sqp::NonsmoothProblem;

/// Added to the initial radius variables so the radius block starts
/// strictly feasible.
pub const RADIUS_INIT_MARGIN: f64 = 1e-3;

type OracleOut = (f64, Vec<f64>);

/// A built attack problem plus what is needed to read its solutions.
#[derive(Debug, Clone)]
pub struct AttackProblem {
    pub problem: NonsmoothProblem,
    pub spec: AttackSpec,
    pub x: Vec<f64>,
    pub y: usize,
    /// Length of the radius block after `x′` (0, 1 or `n`).
    pub t_dim: usize,
    model: Arc<Classifier>,
    base_features: Vec<f64>,
}

impl AttackProblem {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn x_prime<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[..self.n()]
    }

    pub fn t<'a>(&self, z: &'a [f64]) -> &'a [f64] {
        &z[self.n()..]
    }

    /// Full variable vector from a starting `x′`: radius variables start at
    /// the current distance plus [`RADIUS_INIT_MARGIN`].
    pub fn initial_point(&self, x_prime0: &[f64]) -> Vec<f64> {
        let mut z = x_prime0.to_vec();
        match self.t_dim {
            0 => {}
            1 => z.push(lp_distance(&self.x, x_prime0, f64::INFINITY).0 + RADIUS_INIT_MARGIN),
            _ => z.extend(
                self.x
                    .iter()
                    .zip(x_prime0)
                    .map(|(a, b)| (a - b).abs() + RADIUS_INIT_MARGIN),
            ),
        }
        z
    }

    /// `d(x, x′)` in the spec's metric.
    pub fn distance(&self, x_prime: &[f64]) -> Result<f64, AttackError> {
        Ok(match self.spec.metric {
            Metric::Perceptual { inner } => {
                perceptual_from_features(&self.model, &self.base_features, x_prime, inner)?.0
            }
            m => lp_distance(&self.x, x_prime, m.p().expect("norm metric")).0,
        })
    }

    /// `max_{i≠y} fᵢ(x′) − f_y(x′)`.
    pub fn margin(&self, x_prime: &[f64]) -> Result<f64, AttackError> {
        Ok(margin_loss(&self.model.forward(x_prime)?, self.y)?.0)
    }

    /// Clipped attack loss at `x′` (max-loss form).
    pub fn loss(&self, x_prime: &[f64]) -> Result<f64, AttackError> {
        let logits = self.model.forward(x_prime)?;
        let raw = match self.spec.loss.base {
            LossKind::CrossEntropy => cross_entropy(&logits, self.y)?.0,
            LossKind::Margin => margin_loss(&logits, self.y)?.0,
        };
        Ok(raw.min(self.spec.loss.clip_at))
    }
}

pub(super) fn check_inputs(model: &Classifier, x: &[f64], y: usize, spec: &AttackSpec) -> Result<(), AttackError> {
    spec.validate()?;
    if x.len() != model.input_dim() {
        return Err(AttackError::Model(ModelError::Dimension {
            expected: model.input_dim(),
            found: x.len(),
        }));
    }
    if y >= model.num_classes() {
        return Err(AttackError::Model(ModelError::InvalidLabel {
            label: y,
            classes: model.num_classes(),
        }));
    }
    if !x.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(AttackError::Spec("clean input must lie in [0, 1]ⁿ"));
    }
    Ok(())
}

fn pad(g: Vec<f64>, total: usize) -> Vec<f64> {
    let mut g = g;
    g.resize(total, 0.0);
    g
}

/// Adds the `[0, 1]` box on the `x′` block, folded or member by member.
fn with_box(mut p: NonsmoothProblem, n: usize, total: usize, fold: FoldMode) -> NonsmoothProblem {
    match fold {
        FoldMode::Folded { aggregator } => p.with_inequality(move |z| {
            let (v, g) = box_fold(&z[..n], aggregator);
            (v, pad(g, total))
        }),
        FoldMode::Unfolded => {
            for i in 0..n {
                p = p
                    .with_inequality(move |z| {
                        let mut g = vec![0.0; total];
                        g[i] = -1.0;
                        (-z[i], g)
                    })
                    .with_inequality(move |z| {
                        let mut g = vec![0.0; total];
                        g[i] = 1.0;
                        (z[i] - 1.0, g)
                    });
            }
            p
        }
    }
}

/// `f_y(x′) − max_{i≠y} fᵢ(x′) ≤ 0`
fn boundary_oracle(
    model: Arc<Classifier>,
    y: usize,
    n: usize,
    total: usize,
) -> impl Fn(&[f64]) -> OracleOut + Send + Sync {
    move |z| {
        let Ok(trace) = model.trace(&z[..n]) else {
            return (f64::NAN, vec![0.0; total]);
        };
        let logits = trace.logits();
        let j = runner_up(logits, y);
        let mut seed = vec![0.0; logits.len()];
        seed[y] = 1.0;
        seed[j] = -1.0;
        let value = logits[y] - logits[j];
        let (g, _) = model.backward(&trace, &seed, None, false);
        (value, pad(g, total))
    }
}

/// Clipped loss at `x′`, its input gradient and the margin.
pub(crate) fn clipped_loss_with_grad(
    model: &Classifier,
    x_prime: &[f64],
    y: usize,
    loss: &ClippedLoss,
) -> Result<(f64, Vec<f64>, f64), ModelError> {
    let trace = model.trace(x_prime)?;
    let margin = margin_loss(trace.logits(), y)?.0;
    let (raw, d_logits) = match loss.base {
        LossKind::CrossEntropy => cross_entropy(trace.logits(), y)?,
        LossKind::Margin => margin_loss(trace.logits(), y)?,
    };
    let (g, _) = model.backward(&trace, &d_logits, None, false);
    let (v, g) = clip_loss(loss, raw, &g);
    Ok((v, g, margin))
}

/// `ℓ(y, f(x′))` clipped, negated for minimization.
fn loss_objective(model: Arc<Classifier>, y: usize, spec: AttackSpec) -> impl Fn(&[f64]) -> OracleOut + Send + Sync {
    move |z| match clipped_loss_with_grad(&model, z, y, &spec.loss) {
        Ok((v, g, _)) => (-v, g.into_iter().map(|gi| -gi).collect()),
        Err(_) => (f64::NAN, vec![0.0; z.len()]),
    }
}

/// Oracle for `d(x, x′)` on the `x′` block.
fn distance_oracle(
    model: Arc<Classifier>,
    x: Vec<f64>,
    base_features: Vec<f64>,
    metric: Metric,
    total: usize,
) -> impl Fn(&[f64]) -> OracleOut + Send + Sync {
    let n = x.len();
    move |z| match metric {
        Metric::Perceptual { inner } => match perceptual_from_features(&model, &base_features, &z[..n], inner) {
            Ok((v, g)) => (v, pad(g, total)),
            Err(_) => (f64::NAN, vec![0.0; total]),
        },
        m => {
            let (v, g) = lp_distance(&x, &z[..n], m.p().expect("norm metric"));
            (v, pad(g, total))
        }
    }
}

fn base_features(model: &Classifier, x: &[f64], metric: Metric) -> Result<Vec<f64>, AttackError> {
    Ok(match metric {
        Metric::Perceptual { .. } => model.hidden_features(x)?,
        _ => Vec::new(),
    })
}

/// `max ℓ(y, f(x′))  s.t.  d(x, x′) ≤ ε, x′ ∈ [0, 1]ⁿ`, posed as a
/// minimization of the negated clipped loss.
pub fn build_max_loss(
    model: Arc<Classifier>,
    x: &[f64],
    y: usize,
    spec: &AttackSpec,
) -> Result<AttackProblem, AttackError> {
    if spec.formulation != Formulation::MaxLoss {
        return Err(AttackError::Spec("build_max_loss needs a max-loss spec"));
    }
    check_inputs(&model, x, y, spec)?;
    if spec.rescale {
        return Err(AttackError::NotApplicable {
            formulation: spec.formulation,
            metric: format!("{} with rescaling", spec.metric),
        });
    }
    let n = x.len();
    let eps = spec.eps;
    let feats = base_features(&model, x, spec.metric)?;
    let mut p = NonsmoothProblem::new(n, loss_objective(model.clone(), y, *spec));
    p = match (spec.metric, spec.fold) {
        (Metric::Linf, FoldMode::Folded { aggregator }) => {
            let xc = x.to_vec();
            p.with_inequality(move |z| linf_to_box(&xc, z, eps, aggregator).unwrap_or((f64::NAN, vec![0.0; n])))
        }
        (Metric::Linf, FoldMode::Unfolded) => {
            for i in 0..n {
                let xi = x[i];
                p = p
                    .with_inequality(move |z| {
                        let mut g = vec![0.0; n];
                        g[i] = 1.0;
                        (z[i] - xi - eps, g)
                    })
                    .with_inequality(move |z| {
                        let mut g = vec![0.0; n];
                        g[i] = -1.0;
                        (xi - z[i] - eps, g)
                    });
            }
            p
        }
        (metric, _) => {
            let d = distance_oracle(model.clone(), x.to_vec(), feats.clone(), metric, n);
            p.with_inequality(move |z| {
                let (v, g) = d(z);
                (v - eps, g)
            })
        }
    };
    p = with_box(p, n, n, spec.fold);
    Ok(AttackProblem {
        problem: p,
        spec: *spec,
        x: x.to_vec(),
        y,
        t_dim: 0,
        model,
        base_features: feats,
    })
}

/// `min d(x, x′)  s.t.  f_y(x′) ≤ max_{i≠y} fᵢ(x′), x′ ∈ [0, 1]ⁿ`.
/// ℓ∞ and ℓ1 use radius variables; other metrics are minimized directly.
pub fn build_min_radius(
    model: Arc<Classifier>,
    x: &[f64],
    y: usize,
    spec: &AttackSpec,
) -> Result<AttackProblem, AttackError> {
    if spec.formulation != Formulation::MinRadius {
        return Err(AttackError::Spec("build_min_radius needs a min-radius spec"));
    }
    check_inputs(&model, x, y, spec)?;
    if spec.rescale && spec.metric != Metric::Linf {
        return Err(AttackError::NotApplicable {
            formulation: spec.formulation,
            metric: format!("{} with rescaling", spec.metric),
        });
    }
    let n = x.len();
    let feats = base_features(&model, x, spec.metric)?;
    let (t_dim, mut p) = match spec.metric {
        Metric::Linf => {
            let total = n + 1;
            let scale = if spec.rescale { linf_rescale_factor(n) } else { 1.0 };
            let mut p = NonsmoothProblem::new(total, move |z| {
                let mut g = vec![0.0; total];
                g[n] = scale;
                (scale * z[n], g)
            });
            let xc = x.to_vec();
            p = match spec.fold {
                FoldMode::Folded { aggregator } => {
                    p.with_inequality(move |z| match linf_radius_fold(&xc, &z[..n], z[n], aggregator) {
                        Ok((v, mut gx, gt)) => {
                            gx.push(gt);
                            (v, gx)
                        }
                        Err(_) => (f64::NAN, vec![0.0; total]),
                    })
                }
                FoldMode::Unfolded => radius_members(p, x, total, |_| n),
            };
            (1, p)
        }
        Metric::Lp { p: 1.0 } => {
            let total = 2 * n;
            let mut p = NonsmoothProblem::new(total, move |z| {
                let mut g = vec![0.0; total];
                g[n..].iter_mut().for_each(|v| *v = 1.0);
                (z[n..].iter().sum(), g)
            });
            let xc = x.to_vec();
            p = match spec.fold {
                FoldMode::Folded { aggregator } => {
                    p.with_inequality(move |z| match l1_radius_fold(&xc, &z[..n], &z[n..], aggregator) {
                        Ok((v, mut gx, gt)) => {
                            gx.extend(gt);
                            (v, gx)
                        }
                        Err(_) => (f64::NAN, vec![0.0; total]),
                    })
                }
                FoldMode::Unfolded => radius_members(p, x, total, |i| n + i),
            };
            (n, p)
        }
        metric => (
            0,
            NonsmoothProblem::new(n, distance_oracle(model.clone(), x.to_vec(), feats.clone(), metric, n)),
        ),
    };
    let total = n + t_dim;
    p = p.with_inequality(boundary_oracle(model.clone(), y, n, total));
    p = with_box(p, n, total, spec.fold);
    Ok(AttackProblem {
        problem: p,
        spec: *spec,
        x: x.to_vec(),
        y,
        t_dim,
        model,
        base_features: feats,
    })
}

/// Unfolded `±(x′ᵢ − xᵢ) − t_{k(i)} ≤ 0` members.
fn radius_members(
    mut p: NonsmoothProblem,
    x: &[f64],
    total: usize,
    t_index: impl Fn(usize) -> usize,
) -> NonsmoothProblem {
    for (i, &xi) in x.iter().enumerate() {
        let k = t_index(i);
        p = p
            .with_inequality(move |z| {
                let mut g = vec![0.0; total];
                g[i] = 1.0;
                g[k] = -1.0;
                (z[i] - xi - z[k], g)
            })
            .with_inequality(move |z| {
                let mut g = vec![0.0; total];
                g[i] = -1.0;
                g[k] = -1.0;
                (xi - z[i] - z[k], g)
            });
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::numerics::finite_diff_grad;

    fn model() -> Arc<Classifier> {
        Arc::new(Classifier::random(&[2, 8, 3], Activation::Tanh, 3).unwrap())
    }

    #[test]
    fn clean_point_is_feasible_for_max_loss() {
        let m = model();
        let x = [0.3, 0.6];
        for metric in [
            Metric::L1,
            Metric::L2,
            Metric::Linf,
            Metric::lp(1.5),
            Metric::Perceptual {
                inner: super::super::InnerNorm::L2,
            },
        ] {
            let spec = AttackSpec::max_loss(metric, 0.1, ClippedLoss::margin());
            let ap = build_max_loss(m.clone(), &x, 0, &spec).unwrap();
            let e = ap.problem.evaluate(&x).unwrap();
            assert_eq!(e.violation(), 0.0, "{metric}");
            let expected = margin_loss(&m.forward(&x).unwrap(), 0).unwrap().0.min(0.01);
            assert_eq!(e.f, -expected);
        }
    }

    #[test]
    fn linf_uses_two_folded_groups() {
        let spec = AttackSpec::max_loss(Metric::Linf, 0.1, ClippedLoss::margin());
        let ap = build_max_loss(model(), &[0.3, 0.6], 0, &spec).unwrap();
        assert_eq!(ap.problem.num_inequality(), 2);
        let unfolded = build_max_loss(model(), &[0.3, 0.6], 0, &spec.with_fold(FoldMode::Unfolded)).unwrap();
        assert_eq!(unfolded.problem.num_inequality(), 8);
    }

    #[test]
    fn l2_distance_violation() {
        let eps = 0.1;
        let spec = AttackSpec::max_loss(Metric::L2, eps, ClippedLoss::margin());
        let ap = build_max_loss(model(), &[0.3, 0.6], 0, &spec).unwrap();
        let xp = [0.3 + 0.09, 0.6 + 0.12];
        let e = ap.problem.evaluate(&xp).unwrap();
        assert!((e.ineq[0] - 0.5 * eps).abs() < 1e-12);
    }

    #[test]
    fn min_radius_structure() {
        let m = model();
        let x = [0.3, 0.6];
        let l1 = build_min_radius(m.clone(), &x, 0, &AttackSpec::min_radius(Metric::L1)).unwrap();
        assert_eq!(l1.problem.dim(), 4);
        let linf = build_min_radius(m.clone(), &x, 0, &AttackSpec::min_radius(Metric::Linf)).unwrap();
        let z = [0.3, 0.6, 0.03];
        assert!((linf.problem.evaluate(&z).unwrap().f - 0.03 * 2f64.sqrt()).abs() < 1e-15);
        let rescaled_l2 = AttackSpec {
            rescale: true,
            ..AttackSpec::min_radius(Metric::L2)
        };
        assert!(matches!(
            build_min_radius(m.clone(), &x, 0, &rescaled_l2),
            Err(AttackError::NotApplicable { .. })
        ));
        let l2 = build_min_radius(m, &x, 0, &AttackSpec::min_radius(Metric::L2)).unwrap();
        assert_eq!(l2.problem.dim(), 2);
    }

    #[test]
    fn boundary_constraint_is_minus_margin() {
        let m = model();
        let x = [0.3, 0.6];
        let ap = build_min_radius(m.clone(), &x, 1, &AttackSpec::min_radius(Metric::L2)).unwrap();
        let xp = [0.5, 0.2];
        let e = ap.problem.evaluate(&xp).unwrap();
        assert_eq!(e.ineq[0], -ap.margin(&xp).unwrap());
    }

    #[test]
    fn mismatched_spec_rejected() {
        let spec = AttackSpec::min_radius(Metric::Linf);
        assert!(build_max_loss(model(), &[0.3, 0.6], 0, &spec).is_err());
        let spec = AttackSpec::max_loss(Metric::L2, 0.1, ClippedLoss::margin());
        assert!(build_min_radius(model(), &[0.3, 0.6], 0, &spec).is_err());
        assert!(build_max_loss(model(), &[1.3, 0.6], 0, &spec).is_err());
    }

    #[test]
    fn oracle_gradients_match_finite_differences() {
        let m = model();
        let x = [0.3, 0.6];
        let specs = [
            AttackSpec::max_loss(Metric::L2, 0.05, ClippedLoss::unclipped(LossKind::CrossEntropy)),
            AttackSpec::max_loss(Metric::lp(1.5), 0.05, ClippedLoss::unclipped(LossKind::Margin)),
        ];
        let xp = [0.36, 0.52];
        for spec in specs {
            let ap = build_max_loss(m.clone(), &x, 0, &spec).unwrap();
            let e = ap.problem.evaluate(&xp).unwrap();
            let fd = finite_diff_grad(|z| ap.problem.evaluate(z).unwrap().f, &xp, 1e-6).unwrap();
            for (a, b) in e.grad_f.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6);
            }
            let fd = finite_diff_grad(|z| ap.problem.evaluate(z).unwrap().ineq[0], &xp, 1e-6).unwrap();
            for (a, b) in e.ineq_grads[0].iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
