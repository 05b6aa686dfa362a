//! Fully connected classification head trained on top of frozen features.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN_SIZE: usize = 512;
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Layer widths, dropout and initialization seed for the head.
///
/// Hidden layers are `Dense → ReLU → Dropout`; the last layer has
/// `num_classes` units followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl HeadSpec {
    /// One hidden layer of 512 with dropout 0.5.
    pub fn new(num_classes: usize) -> Self {
        Self {
            hidden_sizes: vec![DEFAULT_HIDDEN_SIZE],
            dropout_rate: DEFAULT_DROPOUT,
            num_classes,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "head needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Parameters of a head on `input_dim` features.
    pub fn param_count(&self, input_dim: usize) -> usize {
        let mut fan_in = input_dim;
        let mut total = 0;
        for &width in self.hidden_sizes.iter().chain(std::iter::once(&self.num_classes)) {
            total += fan_in * width + width;
            fan_in = width;
        }
        total
    }
}

/// `y = x · weight + bias`, with `weight` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Head {
    layers: Vec<Dense>,
    dropout_rate: f64,
}

/// Gradients matching [`Head::layers`], plus the batch's mean loss and the
/// softmax output it was computed from.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub loss: f64,
    pub layers: Vec<Dense>,
    pub probabilities: Array2<f64>,
}

impl Head {
    /// Glorot-uniform weights and zero biases drawn from `spec.init_seed`.
    pub fn init(input_dim: usize, spec: &HeadSpec) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(Error::config("head input dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::new();
        for &width in spec.hidden_sizes.iter().chain(std::iter::once(&spec.num_classes)) {
            let limit = (6.0 / (fan_in + width) as f64).sqrt();
            layers.push(Dense {
                weight: Array2::from_shape_simple_fn((fan_in, width), || rng.random_range(-limit..limit)),
                bias: Array1::zeros(width),
            });
            fan_in = width;
        }
        Ok(Self {
            layers,
            dropout_rate: spec.dropout_rate,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("head has no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.ncols() != pair[1].weight.nrows() {
                return Err(Error::config("head layer widths do not chain"));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.weight.ncols()) {
            return Err(Error::config("head bias width does not match its weight"));
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Evaluation-mode class probabilities, one row per input row.
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        softmax_rows(self.logits(features))
    }

    /// Evaluation-mode pre-softmax outputs.
    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = features.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.weight) + &layer.bias;
            if i < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a
    }

    /// Mean categorical cross-entropy over the batch and its gradient with
    /// respect to every head parameter. Dropout is applied only when `rng`
    /// is given.
    pub fn loss_and_gradients(
        &self,
        features: ArrayView2<'_, f64>,
        targets: &[usize],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> HeadGradients {
        let batch = features.nrows();
        debug_assert_eq!(batch, targets.len());
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_rate;

        // Inputs to each layer, plus pre-activations and masks of hidden layers.
        let mut inputs = vec![features.to_owned()];
        let mut pre = Vec::with_capacity(last);
        let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(last);
        for layer in &self.layers[..last] {
            let z = inputs.last().expect("non-empty").dot(&layer.weight) + &layer.bias;
            let mut a = z.mapv(|v| v.max(0.0));
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout_rate > 0.0 => {
                    let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                        if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            inputs.push(a);
        }
        let logits = inputs.last().expect("non-empty").dot(&self.layers[last].weight)
            + &self.layers[last].bias;
        let loss = cross_entropy(&logits, targets);
        let probabilities = softmax_rows(logits);

        let mut delta = probabilities.clone();
        for (row, &t) in targets.iter().enumerate() {
            delta[[row, t]] -= 1.0;
        }
        delta /= batch.max(1) as f64;

        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &inputs[l];
            grads.push(Dense {
                weight: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if l == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.layers[l].weight.t());
            if let Some(mask) = &masks[l - 1] {
                upstream *= mask;
            }
            upstream.zip_mut_with(&pre[l - 1], |g, z| {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = upstream;
        }
        grads.reverse();
        HeadGradients {
            loss,
            layers: grads,
            probabilities,
        }
    }

    /// Plain SGD step: `param -= learning_rate · grad`.
    pub fn apply_sgd(&mut self, grads: &[Dense], learning_rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.weight.scaled_add(-learning_rate, &g.weight);
            layer.bias.scaled_add(-learning_rate, &g.bias);
        }
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<'a>(row: impl IntoIterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mean of `logsumexp(z) − z[target]` over rows.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, &t)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[t]
        })
        .sum();
    total / targets.len() as f64
}
