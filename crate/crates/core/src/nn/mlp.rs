use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_loss_matrix, sigmoid};
use super::NnError;

/// Fully connected layer. `weights` is `fan_in × fan_out` so a batch
/// `X (n × fan_in)` maps to `X·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn affine(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Gradient of one layer, same shapes as the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Multi-layer perceptron: ReLU on every hidden layer, sigmoid on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
}

impl MlpModel {
    /// Checks that consecutive layers chain.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Config("model needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].fan_out() != w[1].fan_in() {
                return Err(NnError::Config(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    w[0].fan_out(),
                    i + 1,
                    w[1].fan_in()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(NnError::Config("bias length differs from layer width".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialised network `input → hidden… → output`.
    pub fn init<R: Rng>(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::glorot(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Pre-sigmoid output scores.
    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.affine(a.view());
            if i < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.logits_batch(x).mapv_into(sigmoid)
    }

    /// Label probabilities for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let m = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(m).row(0).to_vec())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let m = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.logits_batch(m).row(0).to_vec())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        Ok(())
    }

    /// Mean BCE over the batch and labels together with its gradient.
    ///
    /// The gradient uses the fused sigmoid/cross-entropy form `p − y` at the
    /// logits; it agrees with the derivative of the clipped loss wherever the
    /// clip is inactive.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
    ) -> (f64, Vec<LayerGrad>) {
        let last = self.layers.len() - 1;
        // activations[i] is the input to layer i
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(a.view());
            activations.push(a);
            a = if i < last { z.mapv_into(|v| v.max(0.0)) } else { z };
        }
        let probs = a.mapv_into(sigmoid);
        let loss = bce_loss_matrix(probs.view(), y);

        let scale = 1.0 / (probs.len() as f64);
        let mut delta = (&probs - &y) * scale;
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &activations[i];
            grads.push(LayerGrad {
                weights: input.t().dot(&delta).as_standard_layout().into_owned(),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                // input > 0 exactly where the previous ReLU was active
                ndarray::Zip::from(&mut back)
                    .and(input)
                    .for_each(|d, &act| {
                        if act <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = back;
            }
        }
        grads.reverse();
        (loss, grads)
    }

    /// Mean BCE of the model on `(x, y)`.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
        bce_loss_matrix(self.forward_batch(x).view(), y)
    }

    /// Flattened parameter visit order: per layer, weights (row-major) then
    /// bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

pub(crate) fn grad_slices(grads: &[LayerGrad]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(grads.len() * 2);
    for g in grads {
        out.push(g.weights.as_slice().expect("standard layout"));
        out.push(g.bias.as_slice().expect("standard layout"));
    }
    out
}

/// Row view helper for 1-D vectors.
pub fn as_row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView1::from(x).insert_axis(Axis(0))
}
