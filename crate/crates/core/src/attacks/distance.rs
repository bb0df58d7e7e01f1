//! Perturbation distances with subgradients taken with respect to `x′`.

use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::model::Classifier;
use crate::numerics::linalg::{norm1, norm2, norm_inf, norm_p, sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerNorm {
    L1,
    L2,
}

/// `‖δ‖_p` and a subgradient for `p ∈ [1, ∞]`. At `δ = 0` the subgradient
/// is zero; for `p = 1` zero coordinates get zero; for `p = ∞` the first
/// maximal coordinate is used.
pub fn lp_norm_with_grad(delta: &[f64], p: f64) -> (f64, Vec<f64>) {
    let n = delta.len();
    if p.is_infinite() {
        let v = norm_inf(delta);
        let mut g = vec![0.0; n];
        if v > 0.0 {
            let i = delta.iter().position(|d| d.abs() == v).expect("max attained");
            g[i] = delta[i].signum();
        }
        return (v, g);
    }
    if p == 1.0 {
        let g = delta.iter().map(|d| sign0(*d)).collect();
        return (norm1(delta), g);
    }
    let v = if p == 2.0 { norm2(delta) } else { norm_p(delta, p) };
    if v == 0.0 {
        return (0.0, vec![0.0; n]);
    }
    // ∂‖δ‖_p/∂δᵢ = sign(δᵢ)·(|δᵢ|/‖δ‖_p)^{p−1}
    let g = delta.iter().map(|d| sign0(*d) * (d.abs() / v).powf(p - 1.0)).collect();
    (v, g)
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `‖x′ − x‖_p` with its gradient in `x′`.
pub fn lp_distance(x: &[f64], x_prime: &[f64], p: f64) -> (f64, Vec<f64>) {
    lp_norm_with_grad(&sub(x_prime, x), p)
}

/// `‖φ(x) − φ(x′)‖_inner` where `φ` concatenates the model's hidden
/// activations, with the gradient in `x′`.
pub fn perceptual_distance(
    model: &Classifier,
    x: &[f64],
    x_prime: &[f64],
    inner: InnerNorm,
) -> Result<(f64, Vec<f64>), AttackError> {
    let base = model.hidden_features(x)?;
    perceptual_from_features(model, &base, x_prime, inner)
}

/// Same as [`perceptual_distance`] with `φ(x)` precomputed.
pub fn perceptual_from_features(
    model: &Classifier,
    base_features: &[f64],
    x_prime: &[f64],
    inner: InnerNorm,
) -> Result<(f64, Vec<f64>), AttackError> {
    let trace = model.trace(x_prime)?;
    let feats = trace.hidden_features();
    if feats.len() != base_features.len() {
        return Err(AttackError::Spec("feature length mismatch"));
    }
    let u = sub(&feats, base_features);
    let p = match inner {
        InnerNorm::L1 => 1.0,
        InnerNorm::L2 => 2.0,
    };
    let (value, g_feat) = lp_norm_with_grad(&u, p);
    if value == 0.0 || trace.post.len() == 1 {
        return Ok((value, vec![0.0; x_prime.len()]));
    }
    let mut per_layer = Vec::with_capacity(trace.post.len() - 1);
    let mut k = 0;
    for h in &trace.post[1..] {
        per_layer.push(g_feat[k..k + h.len()].to_vec());
        k += h.len();
    }
    let zero_logits = vec![0.0; model.num_classes()];
    let (dx, _) = model.backward(&trace, &zero_logits, Some(&per_layer), false);
    Ok((value, dx))
}
