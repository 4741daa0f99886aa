//! Fast gradient sign method: single-step white-box perturbation of an input
//! along the sign of the loss gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{backward, forward, ModelParams};

/// Perturbation magnitude and an optional componentwise clamp box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub clamp: Option<(f64, f64)>,
}

impl AttackConfig {
    pub fn new(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            clamp: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "clamp bounds must be finite with lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Crafts `x + epsilon * sign(d_loss/d_x)` where the loss is the
/// cross-entropy of classifying `x` as `y`. `sign(0) = 0`, so zero-gradient
/// coordinates are returned bit-exactly, as is the whole input when
/// `epsilon == 0`.
///
/// Each perturbed coordinate is rounded toward `x` by at most a couple of
/// ulps so that the measured componentwise difference never exceeds epsilon.
pub fn fgsm(params: &ModelParams, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if y >= params.output_dim() {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {} classes",
            params.output_dim()
        )));
    }
    let trace = forward(params, x)?;
    if cfg.epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let mut d_logits = trace.probs.clone();
    d_logits[y] -= 1.0;
    let d_z = vec![0.0; params.feature_dim()];
    let grads = backward(params, &trace, &d_logits, &d_z)?;

    let eps = cfg.epsilon;
    let mut out = Vec::with_capacity(x.len());
    for (&xi, &gi) in x.iter().zip(&grads.d_input) {
        let mut v = if gi > 0.0 {
            let mut v = xi + eps;
            while (v - xi).abs() > eps {
                v = v.next_down();
            }
            v
        } else if gi < 0.0 {
            let mut v = xi - eps;
            while (v - xi).abs() > eps {
                v = v.next_up();
            }
            v
        } else {
            xi
        };
        if let Some((lo, hi)) = cfg.clamp {
            v = v.clamp(lo, hi);
        }
        out.push(v);
    }
    Ok(out)
}
