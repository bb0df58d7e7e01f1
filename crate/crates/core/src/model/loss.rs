use super::ModelError;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Largest entry other than `y` (lowest index on ties).
pub fn runner_up(logits: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (i, x) in logits.iter().enumerate() {
        if i != y && (best == usize::MAX || *x > logits[best]) {
            best = i;
        }
    }
    best
}

fn check(logits: &[f64], y: usize) -> Result<(), ModelError> {
    if logits.len() < 2 || y >= logits.len() {
        return Err(ModelError::InvalidLabel {
            label: y,
            classes: logits.len(),
        });
    }
    Ok(())
}

/// Softmax cross-entropy `−log softmax(z)_y` with log-sum-exp
/// stabilization, and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>), ModelError> {
    check(logits, y)?;
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let value = (m - logits[y]) + sum.ln();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[y] -= 1.0;
    Ok((value, grad))
}

/// `max_{i≠y} zᵢ − z_y`, positive iff `x` is misclassified. Gradient uses
/// the lowest-index runner-up on ties.
pub fn margin_loss(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>), ModelError> {
    check(logits, y)?;
    let j = runner_up(logits, y);
    let mut grad = vec![0.0; logits.len()];
    grad[j] = 1.0;
    grad[y] = -1.0;
    Ok((logits[j] - logits[y], grad))
}
