//! Dense feed-forward network with softmax output and cross-entropy loss.
//!
//! The network is built from first principles on top of `ndarray`: forward
//! pass, analytic backpropagation, and RMSprop live here, all deterministic
//! given a seed. Weight matrices are `[out x in]`, biases `[out]`, batches
//! are row-major `[batch x features]`.

mod optimizer;
mod serialize;

pub use optimizer::{rmsprop_step, train_local, LocalTrainConfig, OptimizerState};
pub use serialize::{FORMAT_VERSION, ModelRecord};

use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Smallest probability fed into the log when computing cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::ReLU),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::InvalidArchitecture(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// One dense layer: `out = activation(weights . input + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Weight matrix, `[out x in]`.
    pub weights: Array2<f64>,
    /// Bias vector, `[out]`.
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Layer widths of a model, input first, output last.
///
/// Activations are implied: every layer is ReLU except the last, which is
/// softmax. This is the shape contract shared by merging, fixed-point
/// decoding, and serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input and output sizes, got {}",
                sizes.len()
            )));
        }
        if let Some(&bad) = sizes.iter().find(|&&s| s == 0) {
            return Err(Error::InvalidArchitecture(format!(
                "layer size must be positive, got {bad}"
            )));
        }
        Ok(Architecture { sizes })
    }

    /// `(out, in)` shape of each layer in order.
    pub fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sizes.windows(2).map(|w| (w[1], w[0]))
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().map(|(o, i)| o * i + o).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    fn fingerprint(&self) -> String {
        let dims: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        let mut acts = String::new();
        for i in 0..self.layer_count() {
            acts.push(if i + 1 == self.layer_count() { 's' } else { 'r' });
        }
        format!("{}|{}", dims.join("x"), acts)
    }
}

/// A dense network together with an opaque architecture fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    /// Fingerprint of layer sizes and activations; models can only be
    /// merged or compared when fingerprints agree.
    pub arch_id: String,
}

/// Parameter-shaped gradient of the batch loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<GradientLayer>,
}

#[derive(Debug, Clone)]
pub struct GradientLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A mini-batch of rows with class-index targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Batch {
    pub fn new(x: Array2<f64>, y: Vec<usize>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("batch must have at least one row".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Batch { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// Initialize a model with fan-scaled uniform weights and zero biases.
///
/// Weights are drawn from `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`;
/// the same seed always yields the bit-identical model.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<Model> {
    let arch = Architecture::new(layer_sizes.to_vec())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let layer_count = arch.layer_count();
    let mut layers = Vec::with_capacity(layer_count);
    for (idx, (out, inp)) in arch.layer_shapes().enumerate() {
        let bound = (6.0 / (inp + out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weights = Array2::from_shape_fn((out, inp), |_| dist.sample(&mut rng));
        let bias = Array1::zeros(out);
        let activation = if idx + 1 == layer_count {
            Activation::Softmax
        } else {
            Activation::ReLU
        };
        layers.push(Layer {
            weights,
            bias,
            activation,
        });
    }
    Ok(Model {
        layers,
        arch_id: arch.fingerprint(),
    })
}

impl Model {
    /// Rebuild a model from explicit layers, validating the activation layout.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Model> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("model has no layers".into()));
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            let want = if i == last {
                Activation::Softmax
            } else {
                Activation::ReLU
            };
            if layer.activation != want {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} must be {} but is {}",
                    want.name(),
                    layer.activation.name()
                )));
            }
            if layer.weights.nrows() != layer.bias.len() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: {} weight rows vs {} bias entries",
                    layer.weights.nrows(),
                    layer.bias.len()
                )));
            }
            if i > 0 && layers[i - 1].weights.nrows() != layer.weights.ncols() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {} outputs {} but layer {i} expects {}",
                    i - 1,
                    layers[i - 1].weights.nrows(),
                    layer.weights.ncols()
                )));
            }
        }
        let sizes: Vec<usize> = std::iter::once(layers[0].weights.ncols())
            .chain(layers.iter().map(|l| l.weights.nrows()))
            .collect();
        let arch = Architecture::new(sizes)?;
        Ok(Model {
            layers,
            arch_id: arch.fingerprint(),
        })
    }

    pub fn architecture(&self) -> Architecture {
        let sizes: Vec<usize> = std::iter::once(self.layers[0].weights.ncols())
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect();
        Architecture { sizes }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flatten every parameter in canonical order: per layer, weights
    /// row-major, then bias. This is the order used by serialization and
    /// by the fixed-point encoding.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    /// Rebuild a model from a canonical flat parameter vector.
    pub fn from_flat(arch: &Architecture, values: &[f64]) -> Result<Model> {
        if values.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        let layer_count = arch.layer_count();
        let mut layers = Vec::with_capacity(layer_count);
        let mut offset = 0;
        for (idx, (out, inp)) in arch.layer_shapes().enumerate() {
            let w_len = out * inp;
            let weights =
                Array2::from_shape_vec((out, inp), values[offset..offset + w_len].to_vec())
                    .expect("length checked");
            offset += w_len;
            let bias = Array1::from_vec(values[offset..offset + out].to_vec());
            offset += out;
            layers.push(Layer {
                weights,
                bias,
                activation: if idx + 1 == layer_count {
                    Activation::Softmax
                } else {
                    Activation::ReLU
                },
            });
        }
        Ok(Model {
            layers,
            arch_id: arch.fingerprint(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

fn check_input_dim(model: &Model, x: &Array2<f64>) -> Result<()> {
    let expect = model.input_dim();
    if x.ncols() != expect {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, model expects {expect}",
            x.ncols()
        )));
    }
    Ok(())
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn apply_layer(layer: &Layer, input: &Array2<f64>) -> Array2<f64> {
    let mut z = input.dot(&layer.weights.t()) + &layer.bias;
    match layer.activation {
        Activation::ReLU => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Softmax => softmax_rows(&mut z),
    }
    z
}

/// Run the network on a batch of rows, returning class probabilities.
///
/// Each output row sums to one; the softmax subtracts the row max before
/// exponentiating.
pub fn forward(model: &Model, x: &Array2<f64>) -> Result<Array2<f64>> {
    check_input_dim(model, x)?;
    let mut a = apply_layer(&model.layers[0], x);
    for layer in &model.layers[1..] {
        a = apply_layer(layer, &a);
    }
    Ok(a)
}

/// Forward pass keeping every activation, for backprop.
/// `activations[0]` is the input; `activations[L]` the output probabilities.
fn forward_cached(model: &Model, x: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut activations = Vec::with_capacity(model.layers.len() + 1);
    activations.push(x.clone());
    for layer in &model.layers {
        let next = apply_layer(layer, activations.last().expect("non-empty"));
        activations.push(next);
    }
    activations
}

/// Mean categorical cross-entropy of predicted probabilities against labels.
///
/// Probabilities are clamped at [`PROB_CLAMP`] before the log.
pub fn loss(probs: &Array2<f64>, y: &[usize]) -> Result<f64> {
    if probs.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows vs {} labels",
            probs.nrows(),
            y.len()
        )));
    }
    let classes = probs.ncols();
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(y) {
        if label >= classes {
            return Err(Error::InvalidLabel { label, classes });
        }
        total -= row[label].max(PROB_CLAMP).ln();
    }
    Ok(total / y.len() as f64)
}

/// Analytic gradient of the mean cross-entropy loss over a batch.
pub fn backward(model: &Model, batch: &Batch) -> Result<Gradients> {
    check_input_dim(model, &batch.x)?;
    let classes = model.output_dim();
    if let Some(&label) = batch.y.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    let b = batch.len() as f64;

    let activations = forward_cached(model, &batch.x);
    let probs = activations.last().expect("output present");

    // Softmax + cross-entropy collapse to (p - onehot) / b at the output.
    let mut delta = probs.clone();
    for (mut row, &label) in delta.rows_mut().into_iter().zip(&batch.y) {
        row[label] -= 1.0;
    }
    delta.mapv_inplace(|v| v / b);

    let layer_count = model.layers.len();
    let mut grads: Vec<GradientLayer> = Vec::with_capacity(layer_count);
    for l in (0..layer_count).rev() {
        let input = &activations[l];
        let weights_grad = delta.t().dot(input);
        let bias_grad = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&model.layers[l].weights);
            // ReLU derivative: pass gradient only where the activation fired.
            prev.zip_mut_with(&activations[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
        grads.push(GradientLayer {
            weights: weights_grad,
            bias: bias_grad,
        });
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}
