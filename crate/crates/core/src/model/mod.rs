//! Tiny dense classifier with hand-written backprop, synthetic datasets,
//! training loops and the one-dimensional Danskin example.

mod checkpoint;
mod danskin;
mod data;
mod loss;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use danskin::{
    danskin_example, danskin_global_maximizer, danskin_global_subgradient, danskin_objective, danskin_step,
    InnerSolution,
};
pub use data::{accuracy, Dataset, DatasetConfig, DatasetKind, Sample};
pub use loss::{argmax, cross_entropy, margin_loss, runner_up};
pub use train::{adversarial_train, train, AdvTrainConfig, IdentityInner, InnerMaximizer, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid architecture: {0}")]
    Architecture(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("inner maximizer failed: {0}")]
    Inner(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative from the pre-activation `z` and output `a`; ReLU at 0 is 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `z = W a + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self, ModelError> {
        if weights.rows() != bias.len() {
            return Err(ModelError::Dimension {
                expected: weights.rows(),
                found: bias.len(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Activations recorded by a forward pass. `post[0]` is the input and
/// `post[1..]` the hidden-layer outputs; `pre[l]` is layer `l`'s affine
/// output, the last one being the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }

    /// Concatenated post-activation hidden features.
    pub fn hidden_features(&self) -> Vec<f64> {
        self.post[1..].concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Multilayer perceptron; the activation follows every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    layers: Vec<Layer>,
    activation: Activation,
}

impl Classifier {
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Architecture("need at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(ModelError::Dimension {
                    expected: pair[0].output_dim(),
                    found: pair[1].input_dim(),
                });
            }
        }
        if layers.last().map(Layer::output_dim) < Some(2) {
            return Err(ModelError::Architecture("need at least two classes"));
        }
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform weights and zero biases. `dims` lists layer widths
    /// from input to output, e.g. `[2, 16, 16, 3]`.
    pub fn random(dims: &[usize], activation: Activation, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_init(dims, activation, |fan_in, fan_out| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            rng.random_range(-a..a)
        })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self, ModelError> {
        Self::with_init(dims, activation, |_, _| 0.0)
    }

    fn with_init(
        dims: &[usize],
        activation: Activation,
        mut init: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ModelError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(ModelError::Architecture(
                "need at least input and output widths, all positive",
            ));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1]).map(|_| init(w[0], w[1])).collect();
                Layer {
                    weights: Matrix::from_row_major(w[1], w[0], data).expect("sized"),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Self::from_layers(layers, activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::Dimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace, ModelError> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        post.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer
                .weights
                .mul_vec(post.last().expect("input pushed"))
                .expect("layer widths checked");
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            if l + 1 < self.layers.len() {
                post.push(z.iter().map(|v| self.activation.apply(*v)).collect());
            }
            pre.push(z);
        }
        Ok(Trace { pre, post })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.trace(x)?.pre.pop().expect("non-empty"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, ModelError> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn hidden_features(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.trace(x)?.hidden_features())
    }

    /// Reverse pass. `d_logits` seeds the output; `d_hidden[l]`, if given,
    /// adds a gradient on hidden layer `l + 1`'s post-activation output.
    /// Returns the input gradient and, when requested, per-layer weight
    /// gradients.
    pub fn backward(
        &self,
        trace: &Trace,
        d_logits: &[f64],
        d_hidden: Option<&[Vec<f64>]>,
        want_weights: bool,
    ) -> (Vec<f64>, Option<Vec<LayerGrad>>) {
        let depth = self.layers.len();
        let mut grads: Vec<LayerGrad> = Vec::new();
        let mut delta = d_logits.to_vec();
        let mut dx = Vec::new();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let input = &trace.post[l];
            if want_weights {
                let mut w = Matrix::zeros(layer.output_dim(), layer.input_dim());
                for (r, dr) in delta.iter().enumerate() {
                    if *dr != 0.0 {
                        for (c, a) in input.iter().enumerate() {
                            w[(r, c)] = dr * a;
                        }
                    }
                }
                grads.push(LayerGrad {
                    weights: w,
                    bias: delta.clone(),
                });
            }
            let mut ga = layer.weights.tr_mul_vec(&delta).expect("layer widths checked");
            if l == 0 {
                dx = ga;
                break;
            }
            if let Some(h) = d_hidden {
                for (g, e) in ga.iter_mut().zip(&h[l - 1]) {
                    *g += e;
                }
            }
            delta = ga
                .iter()
                .zip(&trace.pre[l - 1])
                .zip(&trace.post[l])
                .map(|((g, z), a)| g * self.activation.derivative(*z, *a))
                .collect();
        }
        grads.reverse();
        (dx, want_weights.then_some(grads))
    }

    /// Gradient of `wᵀ logits(x)` with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], d_logits: &[f64]) -> Result<Vec<f64>, ModelError> {
        let trace = self.trace(x)?;
        if d_logits.len() != self.num_classes() {
            return Err(ModelError::Dimension {
                expected: self.num_classes(),
                found: d_logits.len(),
            });
        }
        Ok(self.backward(&trace, d_logits, None, false).0)
    }

    pub fn logit_gradient(&self, x: &[f64], class: usize) -> Result<Vec<f64>, ModelError> {
        self.check_label(class)?;
        let mut seed = vec![0.0; self.num_classes()];
        seed[class] = 1.0;
        self.input_gradient(x, &seed)
    }

    pub(crate) fn check_label(&self, y: usize) -> Result<(), ModelError> {
        if y >= self.num_classes() {
            return Err(ModelError::InvalidLabel {
                label: y,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    /// All weights then biases, layer by layer, weights row-major.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<(), ModelError> {
        if p.len() != self.num_parameters() {
            return Err(ModelError::Dimension {
                expected: self.num_parameters(),
                found: p.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let (r, c) = (l.weights.rows(), l.weights.cols());
            l.weights = Matrix::from_row_major(r, c, p[k..k + r * c].to_vec()).expect("sized");
            k += r * c;
            l.bias.copy_from_slice(&p[k..k + r]);
            k += r;
        }
        Ok(())
    }

    /// Flattens per-layer gradients in [`Classifier::parameters`] order.
    pub fn flatten_grads(grads: &[LayerGrad]) -> Vec<f64> {
        let mut out = Vec::new();
        for g in grads {
            out.extend_from_slice(g.weights.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn identity_model(n: usize) -> Classifier {
        let layer = Layer::new(Matrix::identity(n), vec![0.0; n]).unwrap();
        Classifier::from_layers(vec![layer], Activation::Identity).unwrap()
    }

    #[test]
    fn zero_weights_give_bias_and_uniform_loss() {
        let m = Classifier::zeros(&[2, 4, 3], Activation::Tanh).unwrap();
        let logits = m.forward(&[0.3, 0.9]).unwrap();
        assert_eq!(logits, vec![0.0; 3]);
        assert_eq!(cross_entropy(&logits, 1).unwrap().0, 3f64.ln());
        assert_eq!(
            m.input_gradient(&[0.3, 0.9], &[1.0, -1.0, 0.5]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn identity_layer_passes_input() {
        let m = identity_model(3);
        assert_eq!(m.forward(&[0.1, 0.2, 0.7]).unwrap(), vec![0.1, 0.2, 0.7]);
    }

    #[test]
    fn linear_logit_gradient_is_row() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let m = Classifier::from_layers(vec![Layer::new(w, vec![0.1, 0.2]).unwrap()], Activation::Tanh).unwrap();
        assert_eq!(m.logit_gradient(&[0.4, 0.4], 1).unwrap(), vec![-3.0, 0.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = Classifier::random(&[2, 16, 16, 3], Activation::Tanh, 7).unwrap();
        let a = m.forward(&[0.2, 0.8]).unwrap();
        let b = m.forward(&[0.2, 0.8]).unwrap();
        assert_eq!(a, b);
        assert_eq!(m, Classifier::random(&[2, 16, 16, 3], Activation::Tanh, 7).unwrap());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = Classifier::random(&[3, 5, 4, 3], Activation::Tanh, 11).unwrap();
        let x = [0.3, 0.6, 0.1];
        let w = [0.5, -1.0, 2.0];
        let g = m.input_gradient(&x, &w).unwrap();
        let fd = finite_diff_grad(|z| crate::numerics::linalg::dot(&m.forward(z).unwrap(), &w), &x, 1e-6).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let m = Classifier::random(&[2, 3, 3], Activation::Tanh, 5).unwrap();
        let x = [0.4, 0.7];
        let trace = m.trace(&x).unwrap();
        let (_, d) = cross_entropy(trace.logits(), 2).unwrap();
        let grads = m.backward(&trace, &d, None, true).1.unwrap();
        let flat = Classifier::flatten_grads(&grads);
        let p0 = m.parameters();
        let fd = finite_diff_grad(
            |p| {
                let mut mm = m.clone();
                mm.set_parameters(p).unwrap();
                cross_entropy(&mm.forward(&x).unwrap(), 2).unwrap().0
            },
            &p0,
            1e-6,
        )
        .unwrap();
        for (a, b) in flat.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn hidden_features_concatenate_layers() {
        let m = Classifier::random(&[2, 4, 5, 3], Activation::Relu, 1).unwrap();
        assert_eq!(m.hidden_features(&[0.5, 0.5]).unwrap().len(), 9);
        assert_eq!(identity_model(2).hidden_features(&[0.5, 0.5]).unwrap().len(), 0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Classifier::zeros(&[2], Activation::Tanh).is_err());
        assert!(Classifier::zeros(&[2, 1], Activation::Tanh).is_err());
        let m = Classifier::zeros(&[2, 3], Activation::Tanh).unwrap();
        assert!(m.forward(&[1.0]).is_err());
        assert!(m.logit_gradient(&[1.0, 0.0], 3).is_err());
    }
}
