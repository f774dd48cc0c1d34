//! RMSprop and the local training loop run by each simulated client.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::{backward, Batch, Gradients, Model};

/// Decay rate of the squared-gradient moving average.
pub const RMSPROP_RHO: f64 = 0.9;
/// Denominator offset keeping the update finite for tiny averages.
pub const RMSPROP_EPS: f64 = 1e-7;

/// Per-parameter squared-gradient accumulators for RMSprop.
///
/// State is created fresh for every local training session and mirrors the
/// model's layer shapes exactly.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    v: Vec<super::GradientLayer>,
    learning_rate: f64,
}

impl OptimizerState {
    pub fn new(model: &Model, learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        let v = model
            .layers
            .iter()
            .map(|l| super::GradientLayer {
                weights: ndarray::Array2::zeros(l.weights.raw_dim()),
                bias: ndarray::Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        Ok(OptimizerState { v, learning_rate })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    #[cfg(test)]
    fn accumulator(&self, layer: usize) -> &super::GradientLayer {
        &self.v[layer]
    }
}

/// One RMSprop update:
///
/// ```text
/// v <- rho * v + (1 - rho) * g^2
/// w <- w - lr * g / (sqrt(v) + eps)
/// ```
///
/// Non-finite gradients abort the step before touching any parameter.
pub fn rmsprop_step(
    model: Model,
    grads: &Gradients,
    state: OptimizerState,
) -> Result<(Model, OptimizerState)> {
    if grads.layers.len() != model.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient layers for a {}-layer model",
            grads.layers.len(),
            model.layers.len()
        )));
    }
    for (i, (g, l)) in grads.layers.iter().zip(&model.layers).enumerate() {
        if g.weights.raw_dim() != l.weights.raw_dim() || g.bias.raw_dim() != l.bias.raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape mismatch at layer {i}"
            )));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numerical(
            "non-finite gradient; aborting optimizer step".into(),
        ));
    }

    let mut model = model;
    let mut state = state;
    let lr = state.learning_rate;
    for ((layer, acc), g) in model.layers.iter_mut().zip(&mut state.v).zip(&grads.layers) {
        acc.weights.zip_mut_with(&g.weights, |v, &g| {
            *v = RMSPROP_RHO * *v + (1.0 - RMSPROP_RHO) * g * g;
        });
        ndarray::Zip::from(&mut layer.weights)
            .and(&acc.weights)
            .and(&g.weights)
            .for_each(|w, &v, &g| *w -= lr * g / (v.sqrt() + RMSPROP_EPS));

        acc.bias.zip_mut_with(&g.bias, |v, &g| {
            *v = RMSPROP_RHO * *v + (1.0 - RMSPROP_RHO) * g * g;
        });
        ndarray::Zip::from(&mut layer.bias)
            .and(&acc.bias)
            .and(&g.bias)
            .for_each(|w, &v, &g| *w -= lr * g / (v.sqrt() + RMSPROP_EPS));
    }
    Ok((model, state))
}

/// Knobs for one client's local training session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds the epoch shuffles; derive it per client and round.
    pub seed: u64,
}

/// Run mini-batch RMSprop over a client's shard.
///
/// Each epoch shuffles the row order, then walks it in `batch_size` chunks
/// (the last chunk may be short). Optimizer state starts at zero and
/// persists across epochs within this call only.
pub fn train_local(model: Model, data: &Dataset, cfg: &LocalTrainConfig) -> Result<Model> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    if data.rows() == 0 {
        return Err(Error::EmptyClient);
    }
    if data.features() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "data has {} features, model expects {}",
            data.features(),
            model.input_dim()
        )));
    }
    if data.class_count > model.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} classes exceed the model's {} outputs",
            data.class_count,
            model.output_dim()
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..data.rows()).collect();
    let mut model = model;
    let mut state = OptimizerState::new(&model, cfg.learning_rate)?;
    for _ in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let x = data.x.select(Axis(0), chunk);
            let y = chunk.iter().map(|&i| data.y[i]).collect();
            let batch = Batch::new(x, y)?;
            let grads = backward(&model, &batch)?;
            let stepped = rmsprop_step(model, &grads, state)?;
            model = stepped.0;
            state = stepped.1;
        }
    }
    Ok(model)
}
