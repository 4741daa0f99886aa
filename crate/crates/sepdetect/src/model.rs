//! Compact feed-forward classifier with explicit forward traces and full
//! backpropagation, including the gradient with respect to the input.
//!
//! Hidden layers use the rectifier, the output layer is linear, and the last
//! hidden activation is the feature space the rest of the pipeline works in.
//! `backward` accepts two upstream signals: a gradient at the logits and a
//! gradient injected directly at the last hidden activation, so a loss on the
//! features and a loss on the logits backpropagate in a single pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, stable_softmax, Matrix, SeededRng};

/// One dense layer: `weights` is `out x in`, `biases` has length `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// All layer parameters. `dims()` is `[input, hidden..., output]`; the last
/// hidden width is the feature-space dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidInput(
                "a model needs at least one hidden and one output layer".into(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.biases.len() != layer.weights.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: {} biases for {} output rows",
                    layer.biases.len(),
                    layer.weights.rows()
                )));
            }
            if i > 0 && layer.weights.cols() != layers[i - 1].weights.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    layer.weights.cols(),
                    i - 1,
                    layers[i - 1].weights.rows()
                )));
            }
            ensure_finite("weights", layer.weights.data())?;
            ensure_finite("biases", &layer.biases)?;
        }
        Ok(ModelParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weights.cols()];
        dims.extend(self.layers.iter().map(|l| l.weights.rows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    /// Width of the last hidden layer (the feature space).
    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 2].weights.rows()
    }
}

/// Everything `forward` computes for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// The input itself, kept for backprop.
    pub input: Vec<f64>,
    /// Per-layer pre-activations.
    pub pre_activations: Vec<Vec<f64>>,
    /// Per-layer activations (rectified for hidden layers, identity output).
    pub activations: Vec<Vec<f64>>,
    /// Last hidden activation: the feature vector.
    pub z: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn predicted_class(&self) -> usize {
        self.logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Parameter gradients mirroring [`ModelParams`], plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub d_input: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub d_weights: Matrix,
    pub d_biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            layers: params
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    d_weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    d_biases: vec![0.0; l.biases.len()],
                })
                .collect(),
            d_input: vec![0.0; params.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.d_weights.data_mut().iter_mut().zip(b.d_weights.data()) {
                *x += y;
            }
            for (x, y) in a.d_biases.iter_mut().zip(&b.d_biases) {
                *x += y;
            }
        }
        for (x, y) in self.d_input.iter_mut().zip(&other.d_input) {
            *x += y;
        }
    }

    /// Euclidean norm over all parameter gradients (input gradient excluded).
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for l in &self.layers {
            acc += l.d_weights.data().iter().map(|x| x * x).sum::<f64>();
            acc += l.d_biases.iter().map(|x| x * x).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for x in l.d_weights.data_mut() {
                *x *= factor;
            }
            for x in &mut l.d_biases {
                *x *= factor;
            }
        }
        for x in &mut self.d_input {
            *x *= factor;
        }
    }
}

/// He-initialized parameters: weights drawn from N(0, 2 / fan_in), biases
/// zero. Deterministic per seed.
pub fn init_model(dims: &[usize], rng: &mut SeededRng) -> Result<ModelParams> {
    if dims.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "dims must list input, at least one hidden, and output widths; got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "zero-width layer in dims {dims:?}"
        )));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let mut weights = Matrix::zeros(fan_out, fan_in);
        for x in weights.data_mut() {
            *x = std * rng.next_gaussian();
        }
        layers.push(Layer {
            weights,
            biases: vec![0.0; fan_out],
        });
    }
    ModelParams::from_layers(layers)
}

/// Runs the network on one input and records the full trace.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    ensure_finite("input", x)?;
    let n_layers = params.layers.len();
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut activations = Vec::with_capacity(n_layers);
    let mut current = x.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut pre = layer.weights.matvec(&current)?;
        for (p, b) in pre.iter_mut().zip(&layer.biases) {
            *p += b;
        }
        let act: Vec<f64> = if i + 1 < n_layers {
            pre.iter().map(|&v| v.max(0.0)).collect()
        } else {
            pre.clone()
        };
        pre_activations.push(pre);
        current = act.clone();
        activations.push(act);
    }
    let z = activations[n_layers - 2].clone();
    let logits = activations[n_layers - 1].clone();
    let probs = stable_softmax(&logits)?;
    Ok(ForwardTrace {
        input: x.to_vec(),
        pre_activations,
        activations,
        z,
        logits,
        probs,
    })
}

/// Backpropagates a loss whose gradient at the logits is `d_logits` and whose
/// gradient directly at the last hidden activation is `d_z` (often all
/// zeros). The two signals merge at the feature layer and flow down to the
/// parameters and the input.
///
/// The rectifier subgradient at exactly zero is taken as zero.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_logits: &[f64],
    d_z: &[f64],
) -> Result<Gradients> {
    let n_layers = params.layers.len();
    if d_logits.len() != params.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "d_logits has length {}, expected {}",
            d_logits.len(),
            params.output_dim()
        )));
    }
    if d_z.len() != params.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "d_z has length {}, expected {}",
            d_z.len(),
            params.feature_dim()
        )));
    }

    let mut grads = Gradients::zeros_like(params);
    // Output layer is linear, so the pre-activation gradient is d_logits.
    let mut delta = d_logits.to_vec();
    for idx in (0..n_layers).rev() {
        let layer = &params.layers[idx];
        let input_act: &[f64] = if idx == 0 {
            &trace.input
        } else {
            &trace.activations[idx - 1]
        };
        {
            let g = &mut grads.layers[idx];
            for (i, &di) in delta.iter().enumerate() {
                let row = g.d_weights.row_mut(i);
                for (w, &a) in row.iter_mut().zip(input_act) {
                    *w = di * a;
                }
            }
            g.d_biases.copy_from_slice(&delta);
        }
        let mut d_act = layer.weights.matvec_transposed(&delta)?;
        if idx == 0 {
            grads.d_input = d_act;
            break;
        }
        // Feature-layer injection happens on the activation, before the
        // rectifier gate.
        if idx == n_layers - 1 {
            for (a, &dz) in d_act.iter_mut().zip(d_z) {
                *a += dz;
            }
        }
        let pre = &trace.pre_activations[idx - 1];
        delta = d_act
            .iter()
            .zip(pre)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
    }
    Ok(grads)
}
