//! Constraint folding, the ℓ∞/ℓ1 box reformulations and loss clipping.
//!
//! A group of constraints `cᵢ ≤ 0`, `hⱼ = 0` is replaced by the single
//! constraint `F(max{c, 0}, |h|) ≤ 0`, where `F` is zero only at the origin
//! of the nonnegative orthant. Every fold returns its value together with
//! the chain-rule weights `∂F/∂cᵢ`, `∂F/∂hⱼ` so member gradients can be
//! combined into the folded gradient. At exact feasibility all weights are
//! zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoldError {
    #[error("constraint group is empty")]
    EmptyGroup,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("budget must be positive and finite, got {0}")]
    InvalidBudget(f64),
    #[error("group refers to constraint {index} but only {available} exist")]
    IndexOutOfRange { index: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    L2,
    L1,
    Max,
}

impl Aggregator {
    /// `F(z)` for `z ≥ 0`.
    pub fn value(self, z: &[f64]) -> f64 {
        match self {
            Aggregator::L2 => scaled_l2(z),
            Aggregator::L1 => z.iter().sum(),
            Aggregator::Max => z.iter().fold(0.0, |m, v| m.max(*v)),
        }
    }

    /// `∂F/∂zᵢ` given `value = F(z)`; zero vector at the origin. Ties for
    /// `Max` go to the lowest index.
    pub fn weights(self, z: &[f64], value: f64) -> Vec<f64> {
        if value == 0.0 {
            return vec![0.0; z.len()];
        }
        match self {
            Aggregator::L2 => z.iter().map(|v| v / value).collect(),
            Aggregator::L1 => z.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect(),
            Aggregator::Max => {
                let mut w = vec![0.0; z.len()];
                if let Some(i) = z.iter().position(|v| *v == value) {
                    w[i] = 1.0;
                }
                w
            }
        }
    }
}

/// Euclidean norm scaled by the largest entry so tiny violations never
/// underflow to zero.
fn scaled_l2(z: &[f64]) -> f64 {
    let m = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = z.iter().map(|v| (v / m) * (v / m)).sum();
    m * s.sqrt()
}

/// Value of a folded group and `∂F/∂(c, h)`, inequalities first.
#[derive(Debug, Clone, PartialEq)]
pub struct Folded {
    pub value: f64,
    pub weights: Vec<f64>,
}

impl Folded {
    /// `Σ wᵢ ∇gᵢ` over the member gradients (same order as the weights).
    pub fn chain<'a>(&self, member_grads: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
        let mut g = vec![0.0; dim];
        for (w, mg) in self.weights.iter().zip(member_grads) {
            if *w != 0.0 {
                for (gi, mi) in g.iter_mut().zip(mg) {
                    *gi += w * mi;
                }
            }
        }
        g
    }
}

/// Folds one group: `F(max{c₁, 0}, …, |h₁|, …)`.
pub fn fold_constraints(ineq: &[f64], eq: &[f64], aggregator: Aggregator) -> Result<Folded, FoldError> {
    if ineq.is_empty() && eq.is_empty() {
        return Err(FoldError::EmptyGroup);
    }
    let z: Vec<f64> = ineq
        .iter()
        .map(|c| c.max(0.0))
        .chain(eq.iter().map(|h| h.abs()))
        .collect();
    let value = aggregator.value(&z);
    let mut weights = aggregator.weights(&z, value);
    for (w, h) in weights[ineq.len()..].iter_mut().zip(eq) {
        if *h < 0.0 {
            *w = -*w;
        }
    }
    Ok(Folded { value, weights })
}

/// Inequality-only fold; the common case for box and radius families.
pub fn fold_inequalities(ineq: &[f64], aggregator: Aggregator) -> Result<Folded, FoldError> {
    fold_constraints(ineq, &[], aggregator)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldGroup {
    pub name: String,
    pub ineq: Vec<usize>,
    pub eq: Vec<usize>,
}

/// Named groups of constraint indices folded with one aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub aggregator: Aggregator,
    pub groups: Vec<FoldGroup>,
}

impl FoldSpec {
    /// One fold per group; the weights follow each group's own member order.
    pub fn apply(&self, ineq: &[f64], eq: &[f64]) -> Result<Vec<Folded>, FoldError> {
        self.groups
            .iter()
            .map(|g| {
                let pick = |idx: &[usize], vals: &[f64]| -> Result<Vec<f64>, FoldError> {
                    idx.iter()
                        .map(|&i| {
                            vals.get(i).copied().ok_or(FoldError::IndexOutOfRange {
                                index: i,
                                available: vals.len(),
                            })
                        })
                        .collect()
                };
                fold_constraints(&pick(&g.ineq, ineq)?, &pick(&g.eq, eq)?, self.aggregator)
            })
            .collect()
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), FoldError> {
    if expected != found {
        return Err(FoldError::Dimension { expected, found });
    }
    Ok(())
}

/// Folded `[0, 1]` box: members `−x′ᵢ ≤ 0` and `x′ᵢ − 1 ≤ 0`. Returns the
/// value and gradient with respect to `x′`.
pub fn box_fold(x_prime: &[f64], aggregator: Aggregator) -> (f64, Vec<f64>) {
    let n = x_prime.len();
    let members: Vec<f64> = x_prime
        .iter()
        .map(|v| -v)
        .chain(x_prime.iter().map(|v| v - 1.0))
        .collect();
    let folded = fold_inequalities(&members, aggregator).expect("non-empty");
    let grad = (0..n).map(|i| folded.weights[n + i] - folded.weights[i]).collect();
    (folded.value, grad)
}

/// `‖x − x′‖∞ ≤ ε` as the `2n` members `x′ − x − ε ≤ 0`, `x − x′ − ε ≤ 0`,
/// folded. Gradient is with respect to `x′`.
pub fn linf_to_box(x: &[f64], x_prime: &[f64], eps: f64, aggregator: Aggregator) -> Result<(f64, Vec<f64>), FoldError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(FoldError::InvalidBudget(eps));
    }
    check_len(x.len(), x_prime.len())?;
    let (value, gx, _) = two_sided_fold(x, x_prime, |_| eps, aggregator);
    Ok((value, gx))
}

/// ℓ∞ radius members `x′ − x − t𝟙 ≤ 0`, `x − x′ − t𝟙 ≤ 0` folded.
/// Returns `(value, ∂/∂x′, ∂/∂t)`.
pub fn linf_radius_fold(
    x: &[f64],
    x_prime: &[f64],
    t: f64,
    aggregator: Aggregator,
) -> Result<(f64, Vec<f64>, f64), FoldError> {
    check_len(x.len(), x_prime.len())?;
    let (value, gx, gt) = two_sided_fold(x, x_prime, |_| t, aggregator);
    Ok((value, gx, gt.iter().sum()))
}

/// ℓ1 radius members `x′ᵢ − xᵢ − tᵢ ≤ 0`, `xᵢ − x′ᵢ − tᵢ ≤ 0` folded.
/// Returns `(value, ∂/∂x′, ∂/∂t)`.
pub fn l1_radius_fold(
    x: &[f64],
    x_prime: &[f64],
    t: &[f64],
    aggregator: Aggregator,
) -> Result<(f64, Vec<f64>, Vec<f64>), FoldError> {
    check_len(x.len(), x_prime.len())?;
    check_len(x.len(), t.len())?;
    Ok(two_sided_fold(x, x_prime, |i| t[i], aggregator))
}

fn two_sided_fold(
    x: &[f64],
    x_prime: &[f64],
    bound: impl Fn(usize) -> f64,
    aggregator: Aggregator,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let upper = (0..n).map(|i| x_prime[i] - x[i] - bound(i));
    let lower = (0..n).map(|i| x[i] - x_prime[i] - bound(i));
    let members: Vec<f64> = upper.chain(lower).collect();
    let folded = match fold_inequalities(&members, aggregator) {
        Ok(f) => f,
        Err(_) => return (0.0, Vec::new(), Vec::new()),
    };
    let w = &folded.weights;
    let gx = (0..n).map(|i| w[i] - w[n + i]).collect();
    let gt = (0..n).map(|i| -(w[i] + w[n + i])).collect();
    (folded.value, gx, gt)
}

/// Objective factor applied to `t` in the ℓ∞ min-radius form so its scale
/// matches an ℓ2 radius.
pub fn linf_rescale_factor(n: usize) -> f64 {
    (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Margin,
}

/// Loss with an upper clip. `clip_at = +∞` disables clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClippedLoss {
    pub base: LossKind,
    pub clip_at: f64,
}

pub const MARGIN_CLIP: f64 = 0.01;

impl ClippedLoss {
    pub fn margin() -> Self {
        Self {
            base: LossKind::Margin,
            clip_at: MARGIN_CLIP,
        }
    }

    /// Clipped at `ln N_c`, the loss of a uniform prediction.
    pub fn cross_entropy(num_classes: usize) -> Self {
        Self {
            base: LossKind::CrossEntropy,
            clip_at: (num_classes as f64).ln(),
        }
    }

    pub fn unclipped(base: LossKind) -> Self {
        Self {
            base,
            clip_at: f64::INFINITY,
        }
    }

    /// Default clip level for `base`.
    pub fn clipped(base: LossKind, num_classes: usize) -> Self {
        match base {
            LossKind::Margin => Self::margin(),
            LossKind::CrossEntropy => Self::cross_entropy(num_classes),
        }
    }

    pub fn is_clipped(&self) -> bool {
        self.clip_at.is_finite()
    }
}

/// `min(raw, clip_at)`; the gradient is zeroed where `raw > clip_at`.
pub fn clip_loss(loss: &ClippedLoss, raw_value: f64, raw_grad: &[f64]) -> (f64, Vec<f64>) {
    if raw_value > loss.clip_at {
        (loss.clip_at, vec![0.0; raw_grad.len()])
    } else {
        (raw_value, raw_grad.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_examples() {
        let f = fold_constraints(&[0.3, -0.1], &[0.2], Aggregator::L2).unwrap();
        assert!((f.value - 0.13_f64.sqrt()).abs() < 1e-15);
        assert!((f.value - 0.36056).abs() < 1e-5);
        assert_eq!(
            fold_constraints(&[-1.0, 0.0], &[0.0], Aggregator::L2).unwrap().value,
            0.0
        );
        assert!((fold_constraints(&[], &[-0.2], Aggregator::L2).unwrap().value - 0.2).abs() < 1e-16);
        assert_eq!(fold_constraints(&[], &[], Aggregator::L2), Err(FoldError::EmptyGroup));
    }

    #[test]
    fn weights_chain_rule() {
        let f = fold_constraints(&[0.3, -0.1], &[-0.4], Aggregator::L2).unwrap();
        assert!((f.weights[0] - 0.6).abs() < 1e-15);
        assert_eq!(f.weights[1], 0.0);
        assert!((f.weights[2] + 0.8).abs() < 1e-15);
        let m = fold_constraints(&[0.5, 0.5], &[], Aggregator::Max).unwrap();
        assert_eq!(m.weights, vec![1.0, 0.0]);
        let l1 = fold_constraints(&[0.5, -1.0], &[-2.0], Aggregator::L1).unwrap();
        assert_eq!((l1.value, l1.weights), (2.5, vec![1.0, 0.0, -1.0]));
    }

    #[test]
    fn tiny_violation_is_not_lost() {
        let f = fold_inequalities(&[1e-200, 1e-300], Aggregator::L2).unwrap();
        assert!(f.value > 0.0);
    }

    #[test]
    fn linf_box_examples() {
        // x − x′ = (0.05, −0.1) with ε = 0.08: only the second coordinate violates, by 0.02
        let x = [0.5, 0.5];
        let xp = [0.45, 0.6];
        let (v, _) = linf_to_box(&x, &xp, 0.08, Aggregator::L2).unwrap();
        assert!((v - 0.02).abs() < 1e-12);
        assert_eq!(linf_to_box(&x, &[0.55, 0.45], 0.08, Aggregator::L2).unwrap().0, 0.0);
        assert_eq!(
            linf_to_box(&x, &x, 0.08, Aggregator::L2).unwrap(),
            (0.0, vec![0.0, 0.0])
        );
    }

    #[test]
    fn box_fold_values() {
        let (v, g) = box_fold(&[-0.3, 0.5, 1.4], Aggregator::L2);
        assert!((v - 0.5).abs() < 1e-15);
        assert!((g[0] + 0.6).abs() < 1e-15 && g[1] == 0.0 && (g[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn spec_groups() {
        let spec = FoldSpec {
            aggregator: Aggregator::L2,
            groups: vec![
                FoldGroup {
                    name: "a".into(),
                    ineq: vec![0, 2],
                    eq: vec![],
                },
                FoldGroup {
                    name: "b".into(),
                    ineq: vec![1],
                    eq: vec![0],
                },
            ],
        };
        let out = spec.apply(&[3.0, -1.0, 4.0], &[0.0]).unwrap();
        assert_eq!(out[0].value, 5.0);
        assert_eq!(out[1].value, 0.0);
        let bad = FoldSpec {
            aggregator: Aggregator::L2,
            groups: vec![FoldGroup {
                name: "c".into(),
                ineq: vec![7],
                eq: vec![],
            }],
        };
        assert!(matches!(bad.apply(&[0.0], &[]), Err(FoldError::IndexOutOfRange { .. })));
    }

    #[test]
    fn clipping_examples() {
        let m = ClippedLoss::margin();
        assert_eq!(clip_loss(&m, 3.0, &[1.0, 2.0]), (0.01, vec![0.0, 0.0]));
        assert_eq!(clip_loss(&m, -5.0, &[1.0, 2.0]), (-5.0, vec![1.0, 2.0]));
        let ce = ClippedLoss::cross_entropy(10);
        let (v, g) = clip_loss(&ce, 5.0, &[1.0]);
        assert!((v - std::f64::consts::LN_10).abs() < 1e-12);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn rescale_factor() {
        assert!((0.03 * linf_rescale_factor(2) - 0.03 * 2f64.sqrt()).abs() < 1e-18);
    }
}
