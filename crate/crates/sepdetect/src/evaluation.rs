//! Detection metrics: ROC/AUC over densities and a single structured report
//! per evaluated run.
//!
//! The positive class is "adversarial" and the score is the negated density,
//! so lower density means more adversarial. AUC is computed exactly as the
//! rank statistic: the fraction of (adversarial, clean) pairs where the
//! adversarial density is lower, ties counted one half.

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::LabeledDataset;
use crate::detector::{detect, DensityModel, ThresholdMode};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::ensure_finite;
use crate::trainer::TrainConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Exact AUC and the ROC polyline for separating adversarial from clean
/// inputs by density.
///
/// Returns `(auc, points)` where points run from (0, 0) to (1, 1) with
/// nondecreasing coordinates; tied densities produce diagonal segments, so
/// the trapezoidal area under the polyline equals the rank-based AUC.
pub fn roc_auc(clean_densities: &[f64], adv_densities: &[f64]) -> Result<(f64, Vec<[f64; 2]>)> {
    if clean_densities.is_empty() || adv_densities.is_empty() {
        return Err(Error::InvalidInput(
            "roc_auc needs at least one clean and one adversarial density".into(),
        ));
    }
    ensure_finite("clean densities", clean_densities)?;
    ensure_finite("adversarial densities", adv_densities)?;

    let n_clean = clean_densities.len();
    let n_adv = adv_densities.len();
    let mut pooled: Vec<(f64, bool)> = clean_densities
        .iter()
        .map(|&d| (d, false))
        .chain(adv_densities.iter().map(|&d| (d, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    // Midrank sum of the adversarial densities in ascending order.
    let mut adv_rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let adv_in_group = pooled[i..j].iter().filter(|p| p.1).count();
        adv_rank_sum += midrank * adv_in_group as f64;
        i = j;
    }
    // Pairs where the adversarial density is above the clean one (ties 1/2).
    let u_above = adv_rank_sum - (n_adv * (n_adv + 1)) as f64 / 2.0;
    let auc = ((n_adv * n_clean) as f64 - u_above) / (n_adv * n_clean) as f64;

    // ROC sweep over descending score (= ascending density), emitting a
    // point whenever the density changes.
    let mut points = vec![[0.0, 0.0]];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            if pooled[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push([fp as f64 / n_clean as f64, tp as f64 / n_adv as f64]);
        i = j;
    }
    Ok((auc, points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl SummaryStats {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(SummaryStats {
            min: sorted[0],
            median,
            max: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub sigma: f64,
    pub target_fpr: f64,
    pub threshold_mode: ThresholdMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_rate_at_fpr: Option<f64>,
    pub clean_fpr_realized: f64,
    pub min_class_mean_distance: f64,
    pub clean_accuracy: f64,
    /// Fraction of adversarial rows whose prediction differs from the clean
    /// counterpart, when the two sets align row for row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_flip_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub clean: SummaryStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<SummaryStats>,
}

/// One structured document per evaluated run. Adversarial sections are
/// absent (not null) when no adversarial set was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub train_config: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_config: Option<AttackConfig>,
    pub detector_config: DetectorSummary,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc: Option<Vec<[f64; 2]>>,
    pub density_summary: DensitySummary,
}

/// Everything [`build_report`] needs. `adversarial`, when present, should be
/// the attacked counterpart of `clean_test` (same row order) for the flip
/// rate to be reported.
pub struct EvalInputs<'a> {
    pub scenario: &'a str,
    pub seeds: Vec<u64>,
    pub train_config: &'a TrainConfig,
    pub attack_config: Option<&'a AttackConfig>,
    pub params: &'a ModelParams,
    pub detector: &'a DensityModel,
    pub clean_test: &'a LabeledDataset,
    pub adversarial: Option<&'a LabeledDataset>,
}

/// Scores the clean and adversarial sets through the calibrated detector and
/// assembles the report. Deterministic: the same inputs produce an identical
/// document.
pub fn build_report(inputs: &EvalInputs) -> Result<EvalReport> {
    let params = inputs.params;
    let dm = inputs.detector;
    let thresholds = dm.thresholds().ok_or(Error::NotCalibrated)?;
    if dm.feature_dim() != params.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "density model feature dim {} does not match model {}",
            dm.feature_dim(),
            params.feature_dim()
        )));
    }
    if inputs.clean_test.is_empty() {
        return Err(Error::InvalidInput("clean test set is empty".into()));
    }

    let mut clean_densities = Vec::with_capacity(inputs.clean_test.len());
    let mut clean_preds = Vec::with_capacity(inputs.clean_test.len());
    let mut clean_flagged = 0usize;
    let mut clean_correct = 0usize;
    for i in 0..inputs.clean_test.len() {
        let (x, y) = inputs.clean_test.sample(i);
        let r = detect(dm, params, x)?;
        if r.is_adversarial {
            clean_flagged += 1;
        }
        if r.predicted_class == y {
            clean_correct += 1;
        }
        clean_densities.push(r.density);
        clean_preds.push(r.predicted_class);
    }
    let n_clean = inputs.clean_test.len() as f64;

    let mut adv_densities = Vec::new();
    let mut detection_rate = None;
    let mut flip_rate = None;
    if let Some(adv) = inputs.adversarial {
        if adv.dim() != inputs.clean_test.dim() {
            return Err(Error::ShapeMismatch(format!(
                "adversarial set dimension {} does not match clean {}",
                adv.dim(),
                inputs.clean_test.dim()
            )));
        }
        let mut adv_flagged = 0usize;
        let mut flips = 0usize;
        for i in 0..adv.len() {
            let (x, _) = adv.sample(i);
            let r = detect(dm, params, x)?;
            if r.is_adversarial {
                adv_flagged += 1;
            }
            if i < clean_preds.len() && r.predicted_class != clean_preds[i] {
                flips += 1;
            }
            adv_densities.push(r.density);
        }
        if !adv_densities.is_empty() {
            detection_rate = Some(adv_flagged as f64 / adv_densities.len() as f64);
            if adv.len() == clean_preds.len() {
                flip_rate = Some(flips as f64 / adv.len() as f64);
            }
        }
    }

    let (auc, roc) = if adv_densities.is_empty() {
        (None, None)
    } else {
        let (auc, roc) = roc_auc(&clean_densities, &adv_densities)?;
        (Some(auc), Some(roc))
    };

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: inputs.scenario.to_string(),
        seeds: inputs.seeds.clone(),
        train_config: inputs.train_config.clone(),
        attack_config: inputs.attack_config.cloned(),
        detector_config: DetectorSummary {
            sigma: dm.sigma(),
            target_fpr: thresholds.target_fpr,
            threshold_mode: thresholds.mode,
        },
        metrics: Metrics {
            auc,
            detection_rate_at_fpr: detection_rate,
            clean_fpr_realized: clean_flagged as f64 / n_clean,
            min_class_mean_distance: dm.min_class_mean_distance(),
            clean_accuracy: clean_correct as f64 / n_clean,
            adv_flip_rate: flip_rate,
        },
        roc,
        density_summary: DensitySummary {
            clean: SummaryStats::from_values(&clean_densities).expect("clean set non-empty"),
            adversarial: SummaryStats::from_values(&adv_densities),
        },
    })
}
