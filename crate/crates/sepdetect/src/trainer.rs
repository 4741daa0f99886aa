//! Mini-batch SGD over the combined objective, with training history and
//! checkpoint persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{stratified_batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{backward, forward, init_model, Gradients, ModelParams};
use crate::numerics::{Matrix, SeededRng};
use crate::objective::{class_means, combined_loss_and_grads, separation_loss};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Training hyperparameters. `dims` is the full architecture
/// `[input, hidden..., classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.05,
            lambda: 0.1,
            grad_clip_norm: 5.0,
            seed: 0,
            dims: vec![2, 64, 32, 2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grad_clip_norm must be positive, got {}",
                self.grad_clip_norm
            )));
        }
        if self.dims.len() < 3 || self.dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "dims must be [input, hidden..., classes] with nonzero widths, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// One epoch of monitored quantities. The class-mean distance is evaluated on
/// the full training set after the epoch's updates, independent of the
/// per-batch means the gradient used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_total_loss: f64,
    pub mean_ce: f64,
    pub mean_separation: f64,
    pub min_class_mean_distance: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Scales gradients so the global parameter-gradient norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

fn apply_update(params: &mut ModelParams, grads: &Gradients, lr: f64) {
    for (layer, g) in params.layers_mut().iter_mut().zip(&grads.layers) {
        for (w, dw) in layer.weights.data_mut().iter_mut().zip(g.d_weights.data()) {
            *w -= lr * dw;
        }
        for (b, db) in layer.biases.iter_mut().zip(&g.d_biases) {
            *b -= lr * db;
        }
    }
}

/// Full-dataset evaluation pass: feature matrix, accuracy, and the smallest
/// pairwise class-mean distance.
pub fn evaluate_on(params: &ModelParams, ds: &LabeledDataset) -> Result<(f64, f64)> {
    let mut z_rows: Vec<Vec<f64>> = Vec::with_capacity(ds.len());
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        let trace = forward(params, x)?;
        if trace.predicted_class() == y {
            correct += 1;
        }
        z_rows.push(trace.z);
    }
    let z = Matrix::from_rows(&z_rows)?;
    let means = class_means(&z, ds.labels(), ds.num_classes())?;
    let (neg_sq, _) = separation_loss(&means)?;
    let min_dist = (-neg_sq).sqrt();
    let accuracy = correct as f64 / ds.len().max(1) as f64;
    Ok((accuracy, min_dist))
}

/// Trains a fresh model on `ds`. Per batch: forward every sample, evaluate
/// the combined objective, backpropagate the cross-entropy signal at the
/// logits and the separation signal at the feature layer in one pass, clip
/// the summed gradient by global norm, and take an SGD step. Deterministic
/// per seed.
pub fn train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train on an empty dataset".into(),
        ));
    }
    let k = ds.num_classes();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs >= 2 classes, got {k}"
        )));
    }
    if cfg.dims[0] != ds.dim() {
        return Err(Error::ShapeMismatch(format!(
            "dims[0] = {} but dataset dimension is {}",
            cfg.dims[0],
            ds.dim()
        )));
    }
    if *cfg.dims.last().unwrap() != k {
        return Err(Error::ShapeMismatch(format!(
            "dims ends in {} but dataset has {} classes",
            cfg.dims.last().unwrap(),
            k
        )));
    }
    if cfg.batch_size < k {
        return Err(Error::InvalidInput(format!(
            "batch_size {} is smaller than the class count {k}",
            cfg.batch_size
        )));
    }

    let mut rng = SeededRng::new(cfg.seed);
    let mut params = init_model(&cfg.dims, &mut rng)?;
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let batches = stratified_batches(ds, cfg.batch_size, &mut rng)?;
        let mut ce_weighted = 0.0;
        let mut sep_weighted = 0.0;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let mut traces = Vec::with_capacity(batch.len());
            for i in 0..batch.len() {
                traces.push(forward(&params, batch.sample(i).0)?);
            }
            let z = Matrix::from_rows(&traces.iter().map(|t| t.z.clone()).collect::<Vec<_>>())?;
            let logits =
                Matrix::from_rows(&traces.iter().map(|t| t.logits.clone()).collect::<Vec<_>>())?;
            let (breakdown, d_logits, d_z) =
                combined_loss_and_grads(&z, &logits, batch.labels(), k, cfg.lambda)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            ce_weighted += breakdown.ce * batch.len() as f64;
            sep_weighted += breakdown.separation * batch.len() as f64;

            let mut grads = Gradients::zeros_like(&params);
            for (n, trace) in traces.iter().enumerate() {
                let g = backward(&params, trace, &d_logits[n], &d_z[n])?;
                grads.add_assign(&g);
            }
            clip_gradients(&mut grads, cfg.grad_clip_norm);
            apply_update(&mut params, &grads, cfg.learning_rate);
        }

        let n = ds.len() as f64;
        let mean_ce = ce_weighted / n;
        let mean_separation = sep_weighted / n;
        let mean_total_loss = mean_ce + cfg.lambda * mean_separation;
        if !mean_total_loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        let (train_accuracy, min_class_mean_distance) = evaluate_on(&params, ds)?;
        history.epochs.push(EpochStats {
            epoch,
            mean_total_loss,
            mean_ce,
            mean_separation,
            min_class_mean_distance,
            train_accuracy,
        });
    }
    Ok((params, history))
}

/// On-disk checkpoint: schema version, architecture, weights, and the full
/// training configuration (seed included). JSON with round-trip-exact float
/// encoding, so save/load is bit-exact.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    dims: Vec<usize>,
    params: ModelParams,
    config: TrainConfig,
}

pub fn save_checkpoint(params: &ModelParams, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let doc = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        dims: params.dims(),
        params: params.clone(),
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, TrainConfig)> {
    let text = std::fs::read_to_string(path)?;
    let doc: Checkpoint = serde_json::from_str(&text)?;
    if doc.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint schema version {}",
            doc.schema_version
        )));
    }
    // Rebuild through the validating constructor and cross-check the
    // recorded dims against the actual layer shapes.
    let params = ModelParams::from_layers(doc.params.layers().to_vec())?;
    if params.dims() != doc.dims {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint dims {:?} do not match layer shapes {:?}",
            doc.dims,
            params.dims()
        )));
    }
    if doc.config.dims != doc.dims {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint config dims {:?} conflict with recorded dims {:?}",
            doc.config.dims, doc.dims
        )));
    }
    Ok((params, doc.config))
}
