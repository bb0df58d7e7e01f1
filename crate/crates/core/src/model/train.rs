//! Minibatch SGD with momentum, optionally on inner-maximized inputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy, cross_entropy, Classifier, Dataset, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean training loss per epoch, measured on the (possibly perturbed)
    /// inputs actually used for the update.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Produces the input used for the outer update of one sample. Must be
/// deterministic in `(model, x, y, seed)`.
pub trait InnerMaximizer: Sync {
    fn maximize(&self, model: &Classifier, x: &[f64], y: usize, seed: u64) -> Result<Vec<f64>, ModelError>;
}

/// Returns the clean input; turns adversarial training into standard
/// training.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityInner;

impl InnerMaximizer for IdentityInner {
    fn maximize(&self, _: &Classifier, x: &[f64], _: usize, _: u64) -> Result<Vec<f64>, ModelError> {
        Ok(x.to_vec())
    }
}

/// Adversarial training settings; the inner budget lives in the
/// [`InnerMaximizer`].
pub type AdvTrainConfig = TrainConfig;

pub fn train(model: &mut Classifier, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, ModelError> {
    adversarial_train(model, data, &IdentityInner, cfg)
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z =
        seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Each step replaces every batch sample `x` by `inner.maximize(x)` and
/// takes a (momentum) subgradient step on the mean cross-entropy at those
/// points.
pub fn adversarial_train(
    model: &mut Classifier,
    data: &Dataset,
    inner: &dyn InnerMaximizer,
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    if data.train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(ModelError::Architecture(
            "need batch_size ≥ 1, lr > 0 and momentum in [0, 1)",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut velocity = vec![0.0; model.num_parameters()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; velocity.len()];
            for &i in batch {
                let s = &data.train[i];
                model.check_label(s.y)?;
                let xi = inner.maximize(model, &s.x, s.y, sample_seed(cfg.seed, epoch, i))?;
                let trace = model.trace(&xi)?;
                let (loss, d) = cross_entropy(trace.logits(), s.y)?;
                total += loss;
                let g = model.backward(&trace, &d, None, true).1.expect("requested");
                for (a, b) in grad.iter_mut().zip(Classifier::flatten_grads(&g)) {
                    *a += b;
                }
            }
            let scale = cfg.lr / batch.len() as f64;
            let mut params = model.parameters();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - scale * g;
                *p += *v;
            }
            model.set_parameters(&params)?;
        }
        let mean = total / data.train.len() as f64;
        if !mean.is_finite() || !model.parameters().iter().all(|p| p.is_finite()) {
            return Err(ModelError::Diverged { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epochs: cfg.epochs,
        epoch_losses,
        train_accuracy: accuracy(model, &data.train)?,
        val_accuracy: accuracy(model, &data.val)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, DatasetConfig};

    fn data() -> Dataset {
        Dataset::generate(&DatasetConfig::default()).unwrap()
    }

    #[test]
    fn blobs_reach_high_validation_accuracy() {
        let d = data();
        let mut m = Classifier::random(&[2, 16, 16, 3], Activation::Tanh, 0).unwrap();
        let r = train(&mut m, &d, &TrainConfig::default()).unwrap();
        assert!(r.val_accuracy >= 0.95, "{r:?}");
        assert!(r.epoch_losses.last() < r.epoch_losses.first());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let d = data();
        let m0 = Classifier::random(&[2, 8, 3], Activation::Tanh, 1).unwrap();
        let mut m = m0.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        train(&mut m, &d, &cfg).unwrap();
        assert_eq!(m, m0);
    }

    #[test]
    fn same_seed_same_weights() {
        let d = data();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut a = Classifier::random(&[2, 8, 3], Activation::Relu, 2).unwrap();
        let mut b = a.clone();
        train(&mut a, &d, &cfg).unwrap();
        train(&mut b, &d, &cfg).unwrap();
        assert_eq!(a.parameters(), b.parameters());
    }

    #[test]
    fn divergence_is_reported() {
        let d = data();
        let mut m = Classifier::random(&[2, 8, 3], Activation::Identity, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            lr: 1e6,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut m, &d, &cfg), Err(ModelError::Diverged { .. })));
    }
}
