//! Seeded synthetic datasets inside `[0, 1]ⁿ`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Classifier, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Isotropic Gaussian blobs with centers evenly spaced on a circle of
    /// radius `spread` around `(0.5, 0.5)` in the first two coordinates.
    /// Further coordinates, if any, are centered at 0.5.
    Blobs {
        classes: usize,
        dim: usize,
        std: f64,
        spread: f64,
    },
    /// Two interleaved half circles, scaled into the unit square.
    TwoMoons { noise: f64 },
}

impl Default for DatasetKind {
    fn default() -> Self {
        DatasetKind::Blobs {
            classes: 3,
            dim: 2,
            std: 0.07,
            spread: 0.28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub generator: DatasetKind,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            generator: DatasetKind::default(),
            n_train: 500,
            n_val: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub num_classes: usize,
    pub dim: usize,
}

impl Dataset {
    pub fn generate(cfg: &DatasetConfig) -> Result<Self, ModelError> {
        if cfg.n_train == 0 {
            return Err(ModelError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let total = cfg.n_train + cfg.n_val;
        let (mut samples, num_classes, dim) = match &cfg.generator {
            DatasetKind::Blobs {
                classes,
                dim,
                std,
                spread,
            } => {
                if *classes < 2 || *dim < 2 || !(*std >= 0.0) {
                    return Err(ModelError::Architecture("blobs need ≥ 2 classes, ≥ 2 dims and std ≥ 0"));
                }
                let noise = Normal::new(0.0, *std).expect("std checked");
                let samples = (0..total)
                    .map(|i| {
                        let y = i % classes;
                        let angle = 2.0 * PI * y as f64 / *classes as f64 + PI / 2.0;
                        let x = (0..*dim)
                            .map(|k| {
                                let center = match k {
                                    0 => 0.5 + spread * angle.cos(),
                                    1 => 0.5 + spread * angle.sin(),
                                    _ => 0.5,
                                };
                                (center + noise.sample(&mut rng)).clamp(0.0, 1.0)
                            })
                            .collect();
                        Sample { x, y }
                    })
                    .collect::<Vec<_>>();
                (samples, *classes, *dim)
            }
            DatasetKind::TwoMoons { noise } => {
                if !(*noise >= 0.0) {
                    return Err(ModelError::Architecture("noise must be non-negative"));
                }
                let normal = Normal::new(0.0, *noise).expect("noise checked");
                let samples = (0..total)
                    .map(|i| {
                        let y = i % 2;
                        let s: f64 = rng.random_range(0.0..PI);
                        let (px, py) = if y == 0 {
                            (s.cos(), s.sin())
                        } else {
                            (1.0 - s.cos(), 0.5 - s.sin())
                        };
                        // raw range x ∈ [−1, 2], y ∈ [−0.5, 1]
                        let x0 = ((px + 1.0) / 3.0 + normal.sample(&mut rng) / 3.0).clamp(0.0, 1.0);
                        let x1 = ((py + 0.5) / 1.5 * 0.8 + 0.1 + normal.sample(&mut rng) / 3.0).clamp(0.0, 1.0);
                        Sample { x: vec![x0, x1], y }
                    })
                    .collect::<Vec<_>>();
                (samples, 2, 2)
            }
        };
        samples.shuffle(&mut rng);
        let val = samples.split_off(cfg.n_train);
        Ok(Self {
            train: samples,
            val,
            num_classes,
            dim,
        })
    }
}

/// Fraction of `samples` the model classifies correctly (0 for an empty set).
pub fn accuracy(model: &Classifier, samples: &[Sample]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if model.predict(&s.x)? == s.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
