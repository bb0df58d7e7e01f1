//! JSON checkpoint: layer widths plus row-major weights and biases.
//!
//! ```json
//! {"format": "pwcf-mlp", "version": 1, "activation": "tanh",
//!  "dims": [2, 16, 16, 3],
//!  "layers": [{"weights": [/* out × in, row-major */], "bias": [/* out */]}, ...]}
//! ```

use serde::{Deserialize, Serialize};

use super::{Activation, Classifier, Layer, ModelError};
use crate::numerics::Matrix;

pub const CHECKPOINT_FORMAT: &str = "pwcf-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub activation: Activation,
    pub dims: Vec<usize>,
    pub layers: Vec<CheckpointLayer>,
}

impl Checkpoint {
    pub fn from_model(model: &Classifier) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            activation: model.activation(),
            dims: model.dims(),
            layers: model
                .layers()
                .iter()
                .map(|l| CheckpointLayer {
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<Classifier, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.dims.len() != self.layers.len() + 1 {
            return Err(ModelError::Checkpoint("dims and layer count disagree".into()));
        }
        let layers = self
            .layers
            .iter()
            .zip(self.dims.windows(2))
            .map(|(l, w)| {
                let weights = Matrix::from_row_major(w[1], w[0], l.weights.clone())
                    .map_err(|e| ModelError::Checkpoint(format!("weights: {e}")))?;
                Layer::new(weights, l.bias.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Classifier::from_layers(layers, self.activation)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Classifier::random(&[2, 16, 16, 3], Activation::Tanh, 9).unwrap();
        let json = Checkpoint::from_model(&m).to_json();
        let back = Checkpoint::from_json(&json).unwrap().to_model().unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_wrong_version_and_shape() {
        let m = Classifier::random(&[2, 3], Activation::Relu, 1).unwrap();
        let mut c = Checkpoint::from_model(&m);
        c.version = 99;
        assert!(c.to_model().is_err());
        let mut c = Checkpoint::from_model(&m);
        c.layers[0].weights.pop();
        assert!(c.to_model().is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }
}
