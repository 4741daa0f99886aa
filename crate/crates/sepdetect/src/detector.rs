//! The defense: per-class Gaussian kernel density estimation over the
//! classifier's feature vectors, threshold calibration on clean data, and
//! the flagging rule.
//!
//! An input is scored against the references of its *predicted* class; its
//! density is the average of `exp(-d^2 / sigma^2)` over those references,
//! which lies in (0, 1]. Inputs below the calibrated threshold are flagged
//! adversarial.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::numerics::{ensure_finite, Matrix};

pub const DENSITY_MODEL_SCHEMA_VERSION: u32 = 1;

/// How thresholds are keyed. Per-class thresholds adapt to each class's
/// density scale; the global mode calibrates a single cutoff over the pooled
/// clean densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    PerClass,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub mode: ThresholdMode,
    /// One entry per class in per-class mode; a single repeated value in
    /// global mode.
    pub taus: Vec<f64>,
    pub target_fpr: f64,
}

/// Per-class reference feature vectors with the kernel bandwidth and, once
/// calibrated, flagging thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    /// `references[l]` holds the feature vectors of training points whose
    /// true label is `l`, as rows.
    references: Vec<Matrix>,
    sigma: f64,
    thresholds: Option<Thresholds>,
}

impl DensityModel {
    pub fn num_classes(&self) -> usize {
        self.references.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.references[0].cols()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn thresholds(&self) -> Option<&Thresholds> {
        self.thresholds.as_ref()
    }

    pub fn references(&self, class: usize) -> Result<&Matrix> {
        self.references.get(class).ok_or_else(|| {
            Error::InvalidInput(format!(
                "class {class} out of range for {} classes",
                self.references.len()
            ))
        })
    }

    /// Class means of the stored references; the smallest pairwise distance
    /// between them is the separation the training achieved.
    pub fn min_class_mean_distance(&self) -> f64 {
        let means: Vec<Vec<f64>> = self
            .references
            .iter()
            .map(|m| {
                let mut mean = vec![0.0; m.cols()];
                for i in 0..m.rows() {
                    for (acc, v) in mean.iter_mut().zip(m.row(i)) {
                        *acc += v;
                    }
                }
                for v in &mut mean {
                    *v /= m.rows() as f64;
                }
                mean
            })
            .collect();
        let mut best = f64::INFINITY;
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                let d2: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.min(d2);
            }
        }
        best.sqrt()
    }
}

/// Outcome of [`detect`] for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub predicted_class: usize,
    pub density: f64,
    pub threshold_used: f64,
    pub is_adversarial: bool,
}

/// Median of within-class pairwise feature distances over at most
/// `cap` reference points (lower median, deterministic). Falls back to 1.0
/// when there are no pairs or all distances are zero.
fn median_heuristic(references: &[Matrix], cap: usize) -> f64 {
    let mut distances = Vec::new();
    let mut budget = cap;
    for refs in references {
        let take = refs.rows().min(budget);
        budget -= take;
        for i in 0..take {
            for j in (i + 1)..take {
                let d2: f64 = refs
                    .row(i)
                    .iter()
                    .zip(refs.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                distances.push(d2.sqrt());
            }
        }
    }
    if distances.is_empty() {
        return 1.0;
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = distances[(distances.len() - 1) / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Runs every training point through the model, stores the feature vectors
/// grouped by true label, and picks the bandwidth: `sigma` verbatim when
/// given, otherwise the median heuristic over at most 1000 points.
/// Thresholds stay unset until [`calibrate_threshold`].
pub fn fit_density(
    params: &ModelParams,
    train: &LabeledDataset,
    sigma: Option<f64>,
) -> Result<DensityModel> {
    if let Some(s) = sigma {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma must be positive, got {s}"
            )));
        }
    }
    let k = train.num_classes();
    if k == 0 {
        return Err(Error::InvalidInput("dataset declares no classes".into()));
    }
    let mut grouped: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for i in 0..train.len() {
        let (x, y) = train.sample(i);
        grouped[y].push(forward(params, x)?.z);
    }
    if let Some(empty) = grouped.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!(
            "class {empty} has no training points; cannot fit its density"
        )));
    }
    let references: Vec<Matrix> = grouped
        .iter()
        .map(|rows| Matrix::from_rows(rows))
        .collect::<Result<_>>()?;
    let sigma = sigma.unwrap_or_else(|| median_heuristic(&references, 1000));
    Ok(DensityModel {
        references,
        sigma,
        thresholds: None,
    })
}

/// Average Gaussian kernel between `z` and every reference of class `l`:
/// `(1/|X_l|) * sum_i exp(-|z - z_i|^2 / sigma^2)`. Always in (0, 1].
pub fn density(dm: &DensityModel, z: &[f64], l: usize) -> Result<f64> {
    let refs = dm.references(l)?;
    if z.len() != refs.cols() {
        return Err(Error::ShapeMismatch(format!(
            "feature vector has length {}, references have {}",
            z.len(),
            refs.cols()
        )));
    }
    ensure_finite("feature vector", z)?;
    let inv_s2 = 1.0 / (dm.sigma * dm.sigma);
    let mut acc = 0.0;
    for i in 0..refs.rows() {
        let d2: f64 = z
            .iter()
            .zip(refs.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        acc += (-d2 * inv_s2).exp();
    }
    Ok(acc / refs.rows() as f64)
}

/// Nearest-rank quantile: the k-th smallest value with
/// `k = ceil(target_fpr * n)`, 1-based.
fn nearest_rank_threshold(densities: &mut [f64], target_fpr: f64) -> f64 {
    densities.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = densities.len();
    let k = ((target_fpr * n as f64).ceil() as usize).clamp(1, n);
    densities[k - 1]
}

/// Calibrates flagging thresholds from clean validation data.
///
/// Each correctly-classified validation sample contributes its density under
/// its predicted class. Per class (or pooled, in global mode) the threshold
/// is the nearest-rank quantile at `target_fpr`; flagging is strictly
/// `density < tau`, so the realized clean false-positive rate on the
/// calibration samples is below the target by construction.
pub fn calibrate_threshold(
    dm: &DensityModel,
    params: &ModelParams,
    clean_validation: &LabeledDataset,
    target_fpr: f64,
    mode: ThresholdMode,
) -> Result<DensityModel> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::InvalidInput(format!(
            "target_fpr must be in (0, 1), got {target_fpr}"
        )));
    }
    let k = dm.num_classes();
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); k];
    for i in 0..clean_validation.len() {
        let (x, y) = clean_validation.sample(i);
        let trace = forward(params, x)?;
        let pred = trace.predicted_class();
        if pred == y {
            per_class[pred].push(density(dm, &trace.z, pred)?);
        }
    }
    let taus = match mode {
        ThresholdMode::PerClass => {
            let mut taus = Vec::with_capacity(k);
            for (c, densities) in per_class.iter_mut().enumerate() {
                if densities.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "class {c} has no correctly-classified validation samples to calibrate on"
                    )));
                }
                taus.push(nearest_rank_threshold(densities, target_fpr));
            }
            taus
        }
        ThresholdMode::Global => {
            if let Some(c) = per_class.iter().position(Vec::is_empty) {
                return Err(Error::InvalidInput(format!(
                    "class {c} has no correctly-classified validation samples to calibrate on"
                )));
            }
            let mut pooled: Vec<f64> = per_class.into_iter().flatten().collect();
            let tau = nearest_rank_threshold(&mut pooled, target_fpr);
            vec![tau; k]
        }
    };
    Ok(DensityModel {
        references: dm.references.clone(),
        sigma: dm.sigma,
        thresholds: Some(Thresholds {
            mode,
            taus,
            target_fpr,
        }),
    })
}

/// Classifies `x`, scores its density against the predicted class, and flags
/// it when the density falls strictly below that class's threshold.
pub fn detect(dm: &DensityModel, params: &ModelParams, x: &[f64]) -> Result<DetectionResult> {
    let thresholds = dm.thresholds.as_ref().ok_or(Error::NotCalibrated)?;
    let trace = forward(params, x)?;
    let predicted_class = trace.predicted_class();
    let d = density(dm, &trace.z, predicted_class)?;
    let threshold_used = thresholds.taus[predicted_class];
    Ok(DetectionResult {
        predicted_class,
        density: d,
        threshold_used,
        is_adversarial: d < threshold_used,
    })
}

/// Content hashes tying a persisted density model to the checkpoint and
/// training data it was fitted from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_sha256: String,
    pub train_data_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityModelFile {
    schema_version: u32,
    model: DensityModel,
    provenance: Provenance,
}

pub fn save_density_model(dm: &DensityModel, provenance: &Provenance, path: &Path) -> Result<()> {
    let doc = DensityModelFile {
        schema_version: DENSITY_MODEL_SCHEMA_VERSION,
        model: dm.clone(),
        provenance: provenance.clone(),
    };
    std::fs::write(path, serde_json::to_string(&doc)?)?;
    Ok(())
}

pub fn load_density_model(path: &Path) -> Result<(DensityModel, Provenance)> {
    let text = std::fs::read_to_string(path)?;
    let doc: DensityModelFile = serde_json::from_str(&text)?;
    if doc.schema_version != DENSITY_MODEL_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported density model schema version {}",
            doc.schema_version
        )));
    }
    if doc.model.references.is_empty() {
        return Err(Error::InvalidInput("density model has no classes".into()));
    }
    Ok((doc.model, doc.provenance))
}
