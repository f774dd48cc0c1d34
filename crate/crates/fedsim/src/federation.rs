//! Federated averaging orchestration.
//!
//! One round: broadcast the global model, let every client train a copy on
//! its own shard, merge the results by unweighted layer-wise mean.
//! Rounds repeat until the global weights stop moving (max-abs delta at or
//! below the tolerance) or the round cap is hit.
//!
//! With `secure_agg` set, clients submit fixed-point-encoded, pairwise-
//! masked updates and the merge consumes only their ring sum; plaintext
//! client models never reach the merging code path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{init_model, train_local, LocalTrainConfig, Model};
use crate::secagg::{
    aggregate_masked, decode_sum, encode_fixed, gen_masks, mask_update, MaskedUpdate,
    PairwiseSeeds, DEFAULT_FRAC_BITS,
};
use crate::seeds::train_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Number of participating clients; every round uses all of them.
    pub t: usize,
    /// Hard cap on rounds.
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Round-over-round max-abs weight change at or below this stops early.
    pub convergence_tol: f64,
    /// Base seed; everything else derives from it.
    pub seed: u64,
    pub secure_agg: bool,
    /// Scale client contributions by shard size instead of plain averaging.
    pub weighted: bool,
    pub frac_bits: u32,
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden_layers: Vec<usize>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            t: 1,
            rounds: 20,
            local_epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            convergence_tol: 1e-4,
            seed: 42,
            secure_agg: true,
            weighted: false,
            frac_bits: DEFAULT_FRAC_BITS,
            hidden_layers: vec![64, 32],
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 1 {
            return Err(Error::InvalidInput("client count must be at least 1".into()));
        }
        if self.rounds < 1 {
            return Err(Error::InvalidInput("round count must be at least 1".into()));
        }
        if self.local_epochs < 1 {
            return Err(Error::InvalidInput("local epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.convergence_tol < 0.0 || self.convergence_tol.is_nan() {
            return Err(Error::InvalidInput(format!(
                "convergence tolerance must be non-negative, got {}",
                self.convergence_tol
            )));
        }
        Ok(())
    }
}

/// One completed round: the merged model, its test-set metrics, and how
/// far the weights moved.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// 1-based, strictly increasing.
    pub round_index: usize,
    pub global_model: Model,
    pub metrics: MetricsReport,
    pub weight_delta: f64,
}

fn check_same_arch(models: &[Model]) -> Result<()> {
    for m in &models[1..] {
        if m.arch_id != models[0].arch_id {
            return Err(Error::ArchMismatch(format!(
                "{} vs {}",
                models[0].arch_id, m.arch_id
            )));
        }
    }
    Ok(())
}

/// Unweighted layer-wise mean of the models' parameters.
pub fn merge_models(models: &[Model]) -> Result<Model> {
    let weights = vec![1.0; models.len()];
    merge_models_weighted(models, &weights)
}

/// Mean with per-model weights; weights are normalized by their sum, so
/// shard sizes can be passed directly.
pub fn merge_models_weighted(models: &[Model], weights: &[f64]) -> Result<Model> {
    if models.is_empty() {
        return Err(Error::InvalidInput("cannot merge zero models".into()));
    }
    if models.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput(
            "merge weights must be non-negative and finite".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("merge weights sum to zero".into()));
    }
    check_same_arch(models)?;

    // Accumulate deviations from the first model instead of raw sums:
    // merged = first + sum_i alpha_i * (m_i - first). Identical inputs
    // contribute zero deviation, so the mean of equal models is bit-exact.
    let first = &models[0];
    let mut merged = first.clone();
    for (m, &w) in models.iter().zip(weights).skip(1) {
        let alpha = w / total;
        for ((acc, l), f) in merged.layers.iter_mut().zip(&m.layers).zip(&first.layers) {
            acc.weights.scaled_add(alpha, &(&l.weights - &f.weights));
            acc.bias.scaled_add(alpha, &(&l.bias - &f.bias));
        }
    }
    Ok(merged)
}

/// Largest absolute elementwise difference between two models' parameters.
pub fn weight_delta(prev: &Model, next: &Model) -> Result<f64> {
    if prev.arch_id != next.arch_id {
        return Err(Error::ArchMismatch(format!(
            "{} vs {}",
            prev.arch_id, next.arch_id
        )));
    }
    let mut max = 0.0f64;
    for (a, b) in prev.layers.iter().zip(&next.layers) {
        for (x, y) in a.weights.iter().zip(b.weights.iter()) {
            max = max.max((x - y).abs());
        }
        for (x, y) in a.bias.iter().zip(b.bias.iter()) {
            max = max.max((x - y).abs());
        }
    }
    Ok(max)
}

/// True when the weights moved by at most `tol` (inclusive).
pub fn has_converged(prev: &Model, next: &Model, tol: f64) -> Result<bool> {
    Ok(weight_delta(prev, next)? <= tol)
}

fn check_clients(clients: &[ClientDataset], cfg: &FederationConfig) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::EmptyClient);
    }
    if clients.len() != cfg.t {
        return Err(Error::InvalidInput(format!(
            "config says {} clients but {} shards were supplied",
            cfg.t,
            clients.len()
        )));
    }
    for (i, c) in clients.iter().enumerate() {
        // Sequential ids are what ties a shard to its mask identity.
        if c.client_id != i {
            return Err(Error::InvalidInput(format!(
                "client ids must be 0..{}, found {} at position {i}",
                cfg.t, c.client_id
            )));
        }
        if c.data.features() != clients[0].data.features() {
            return Err(Error::ShapeMismatch(format!(
                "client {i} has {} features, client 0 has {}",
                c.data.features(),
                clients[0].data.features()
            )));
        }
    }
    Ok(())
}

/// Per-client contribution scale: 1 for plain averaging, shard share times
/// client count for weighted averaging (so dividing the aggregate by `t`
/// yields the weighted mean).
fn client_scales(clients: &[ClientDataset], cfg: &FederationConfig) -> Vec<f64> {
    if !cfg.weighted {
        return vec![1.0; clients.len()];
    }
    let total: usize = clients.iter().map(|c| c.data.rows()).sum();
    clients
        .iter()
        .map(|c| c.data.rows() as f64 * cfg.t as f64 / total as f64)
        .collect()
}

fn scale_model(mut model: Model, scale: f64) -> Model {
    if scale != 1.0 {
        for layer in model.layers.iter_mut() {
            layer.weights.mapv_inplace(|v| v * scale);
            layer.bias.mapv_inplace(|v| v * scale);
        }
    }
    model
}

/// One federation round over all clients.
///
/// Every client trains a copy of `global` with a seed derived from
/// `(cfg.seed, round, client_id)`; results are merged in client-id order.
/// `round` is 1-based and doubles as the mask nonce on the secure path.
pub fn run_round(
    global: &Model,
    clients: &[ClientDataset],
    cfg: &FederationConfig,
    round: usize,
) -> Result<Model> {
    cfg.validate()?;
    check_clients(clients, cfg)?;
    let scales = client_scales(clients, cfg);
    let train_cfg = |client_id: usize| LocalTrainConfig {
        epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: train_seed(cfg.seed, round, client_id),
    };

    let merged = if cfg.secure_agg {
        let seeds = PairwiseSeeds::deal(cfg.t, cfg.seed)?;
        let updates: Result<Vec<MaskedUpdate>> = clients
            .par_iter()
            .zip(&scales)
            .map(|(client, &scale)| {
                let id = client.client_id;
                let run = || -> Result<MaskedUpdate> {
                    let local = train_local(global.clone(), &client.data, &train_cfg(id))?;
                    let encoded = encode_fixed(&scale_model(local, scale), cfg.frac_bits)?;
                    let mask = gen_masks(id, &seeds, round as u64, encoded.len())?;
                    mask_update(&encoded, &mask, id, round as u64)
                };
                run().map_err(|e| e.for_client(id))
            })
            .collect();
        let sum = aggregate_masked(&updates?, cfg.t)?;
        decode_sum(&sum, cfg.t, &global.architecture())?
    } else {
        let locals: Result<Vec<Model>> = clients
            .par_iter()
            .map(|client| {
                train_local(global.clone(), &client.data, &train_cfg(client.client_id))
                    .map_err(|e| e.for_client(client.client_id))
            })
            .collect();
        let locals = locals?;
        if cfg.weighted {
            let sizes: Vec<f64> = clients.iter().map(|c| c.data.rows() as f64).collect();
            merge_models_weighted(&locals, &sizes)?
        } else {
            merge_models(&locals)?
        }
    };
    if !merged.is_finite() {
        return Err(Error::Numerical(
            "merged model has non-finite parameters".into(),
        ));
    }
    Ok(merged)
}

/// Run a full federation: init, iterate rounds, stop on convergence or the
/// round cap. Returns the final global model and the per-round history.
pub fn run_federation(
    clients: &[ClientDataset],
    test: &Dataset,
    cfg: &FederationConfig,
) -> Result<(Model, Vec<RoundRecord>)> {
    cfg.validate()?;
    check_clients(clients, cfg)?;
    let features = clients[0].data.features();
    let classes = clients[0].data.class_count;
    for c in clients {
        if c.data.class_count != classes {
            return Err(Error::InvalidInput(format!(
                "client {} sees {} classes, client 0 sees {classes}",
                c.client_id, c.data.class_count
            )));
        }
    }
    if test.features() != features || test.class_count != classes {
        return Err(Error::ShapeMismatch(format!(
            "test set is {}-feature/{}-class, training data is {features}-feature/{classes}-class",
            test.features(),
            test.class_count
        )));
    }

    let mut sizes = Vec::with_capacity(cfg.hidden_layers.len() + 2);
    sizes.push(features);
    sizes.extend_from_slice(&cfg.hidden_layers);
    sizes.push(classes);

    let mut global = init_model(&sizes, cfg.seed)?;
    let mut history = Vec::new();
    for round in 1..=cfg.rounds {
        let next = run_round(&global, clients, cfg, round)?;
        let delta = weight_delta(&global, &next)?;
        let metrics = evaluate(&next, test)?;
        history.push(RoundRecord {
            round_index: round,
            global_model: next.clone(),
            metrics,
            weight_delta: delta,
        });
        global = next;
        if delta <= cfg.convergence_tol {
            break;
        }
    }
    Ok((global, history))
}
