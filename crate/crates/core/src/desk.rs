//! Desk-scale experiment setup: the default dataset and classifier, the
//! evaluation suite and budget calibration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::radius_stats;
use crate::model::{
    train, Activation, Classifier, Dataset, DatasetConfig, ModelError, Sample, TrainConfig, TrainReport,
};
use crate::penalty_sqp::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskConfig {
    pub dataset: DatasetConfig,
    /// Layer widths including input and output.
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub suite_size: usize,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            dims: vec![2, 16, 16, 3],
            activation: Activation::Tanh,
            model_seed: 0,
            train: TrainConfig::default(),
            suite_size: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskSetup {
    pub model: Arc<Classifier>,
    pub data: Dataset,
    pub report: TrainReport,
    /// `(validation index, sample)` pairs.
    pub suite: Vec<(usize, Sample)>,
}

/// Generates the dataset, trains the classifier and picks the suite.
pub fn prepare(cfg: &DeskConfig) -> Result<DeskSetup, ModelError> {
    let data = Dataset::generate(&cfg.dataset)?;
    let dims = &cfg.dims;
    if dims.first() != Some(&data.dim) || dims.last() != Some(&data.num_classes) {
        return Err(ModelError::Architecture(
            "dims must start at the input width and end at the class count",
        ));
    }
    let mut model = Classifier::random(dims, cfg.activation, cfg.model_seed)?;
    let report = train(&mut model, &data, &cfg.train)?;
    let suite = desk_suite(&model, &data.val, cfg.suite_size)?;
    Ok(DeskSetup {
        model: Arc::new(model),
        data,
        report,
        suite,
    })
}

/// The first `size` samples the model classifies correctly, with their
/// indices.
pub fn desk_suite(model: &Classifier, samples: &[Sample], size: usize) -> Result<Vec<(usize, Sample)>, ModelError> {
    let mut out = Vec::with_capacity(size);
    for (i, s) in samples.iter().enumerate() {
        if out.len() == size {
            break;
        }
        if model.predict(&s.x)? == s.y {
            out.push((i, s.clone()));
        }
    }
    Ok(out)
}

/// `factor ×` the median of the measured radii.
pub fn calibrate_eps(radii: &[f64], factor: f64) -> Option<f64> {
    radius_stats(radii).ok().map(|s| factor * s.median)
}

/// Tight tolerances used by the desk experiments.
pub fn desk_solver_config() -> SolverConfig {
    SolverConfig {
        tau_stationarity: 1e-6,
        tau_violation: 1e-8,
        ..SolverConfig::default()
    }
}
