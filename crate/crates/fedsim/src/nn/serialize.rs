//! JSON persistence for models.
//!
//! The on-disk record stores layer sizes, activation names, and per-layer
//! parameters (weights row-major, then bias). Serialization is
//! deterministic: the same model always produces the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Architecture, Model};

/// Bumped whenever the record layout changes incompatibly.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<String>,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Row-major `[out x in]` weights.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Model {
    pub fn to_record(&self) -> Result<ModelRecord> {
        if !self.is_finite() {
            return Err(Error::Numerical(
                "refusing to serialize non-finite parameters".into(),
            ));
        }
        Ok(ModelRecord {
            format_version: FORMAT_VERSION,
            layer_sizes: self.architecture().sizes,
            activations: self.layers.iter().map(|l| l.activation.name().into()).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        })
    }

    pub fn from_record(record: &ModelRecord) -> Result<Model> {
        if record.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                record.format_version
            )));
        }
        let arch = Architecture::new(record.layer_sizes.clone())?;
        if record.layers.len() != arch.layer_count()
            || record.activations.len() != arch.layer_count()
        {
            return Err(Error::InvalidArchitecture(format!(
                "{} sizes but {} layer(s) and {} activation(s)",
                record.layer_sizes.len(),
                record.layers.len(),
                record.activations.len()
            )));
        }
        let mut flat = Vec::with_capacity(arch.param_count());
        for (i, ((out, inp), layer)) in arch.layer_shapes().zip(&record.layers).enumerate() {
            if layer.weights.len() != out * inp || layer.bias.len() != out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: expected {}x{} weights and {out} biases, got {} and {}",
                    out,
                    inp,
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        if let Some(bad) = flat.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite parameter {bad} in model record"
            )));
        }
        let model = Model::from_flat(&arch, &flat)?;
        // The canonical layout is ReLU hidden layers and a softmax output;
        // anything else in the record is a corrupt or foreign artifact.
        for (i, (have, layer)) in record.activations.iter().zip(&model.layers).enumerate() {
            if have != layer.activation.name() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} activation {have:?} does not fit the relu/softmax layout"
                )));
            }
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record()?)?)
    }

    pub fn from_json(json: &str) -> Result<Model> {
        let record: ModelRecord = serde_json::from_str(json)?;
        Model::from_record(&record)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Model::from_json(&json)
    }
}
