//! The training objective: cross-entropy on the logits plus a weighted
//! between-class separation term on the feature vectors, with exact gradients
//! for both.
//!
//! The separation term is the negative squared distance between the two
//! closest class means, computed per mini-batch. Minimizing it pushes the
//! closest pair of classes apart; only samples in that pair receive a direct
//! feature-space gradient.

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, stable_softmax, Matrix};

/// Per-class means of feature vectors with the per-class sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    pub means: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl ClassMeans {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    /// Smallest pairwise Euclidean distance between two class means.
    pub fn min_pairwise_distance(&self) -> Result<f64> {
        let (neg_sq, _) = separation_loss(self)?;
        Ok((-neg_sq).sqrt())
    }
}

/// The decomposed batch loss. `total = ce + lambda * separation` always.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub separation: f64,
    pub lambda: f64,
    pub total: f64,
    /// The closest pair of class means, `i < j`.
    pub argmin_pair: (usize, usize),
}

/// Mean feature vector per class. Every class in `[0, num_classes)` must
/// appear in `labels`.
pub fn class_means(z: &Matrix, labels: &[usize], num_classes: usize) -> Result<ClassMeans> {
    if z.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows but {} labels",
            z.rows(),
            labels.len()
        )));
    }
    let mut means = vec![vec![0.0; z.cols()]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::InvalidInput(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        counts[l] += 1;
        for (m, v) in means[l].iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "class {missing} has no samples in this batch; class means are undefined"
        )));
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= c as f64;
        }
    }
    Ok(ClassMeans { means, counts })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Negative squared distance between the two closest class means, plus that
/// pair. Ties resolve to the lexicographically smallest `(i, j)`.
pub fn separation_loss(means: &ClassMeans) -> Result<(f64, (usize, usize))> {
    let k = means.num_classes();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "separation loss needs at least 2 classes, got {k}"
        )));
    }
    let mut best = f64::INFINITY;
    let mut pair = (0, 1);
    for i in 0..k {
        for j in (i + 1)..k {
            let d2 = squared_distance(&means.means[i], &means.means[j]);
            if d2 < best {
                best = d2;
                pair = (i, j);
            }
        }
    }
    Ok((-best, pair))
}

/// `-log softmax(logits)[y]`, evaluated through log-sum-exp.
pub fn cross_entropy(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits)? - logits[y])
}

/// Per-sample gradient rows, one vector per batch row.
pub type PerSampleGrads = Vec<Vec<f64>>;

/// Evaluates the combined batch objective and its gradients.
///
/// Returns the loss breakdown, the per-sample logits gradient of the batch
/// mean cross-entropy, and the per-sample feature gradient of the weighted
/// separation term. Only samples whose class is in the closest pair carry a
/// nonzero feature gradient.
pub fn combined_loss_and_grads(
    z: &Matrix,
    logits: &Matrix,
    labels: &[usize],
    num_classes: usize,
    lambda: f64,
) -> Result<(LossBreakdown, PerSampleGrads, PerSampleGrads)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let batch = labels.len();
    if z.rows() != batch || logits.rows() != batch {
        return Err(Error::ShapeMismatch(format!(
            "rows must align: {} features, {} logits, {} labels",
            z.rows(),
            logits.rows(),
            batch
        )));
    }
    if batch == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }

    let means = class_means(z, labels, num_classes)?;
    let (separation, (pi, pj)) = separation_loss(&means)?;

    let mut ce_sum = 0.0;
    let mut d_logits = Vec::with_capacity(batch);
    for (n, &y) in labels.iter().enumerate() {
        let row = logits.row(n);
        ce_sum += cross_entropy(row, y)?;
        let mut g = stable_softmax(row)?;
        g[y] -= 1.0;
        for v in &mut g {
            *v /= batch as f64;
        }
        d_logits.push(g);
    }
    let ce = ce_sum / batch as f64;

    // d(separation)/d(mu_i) = -2 (mu_i - mu_j); each member of class i sees
    // 1/N_i of it. Classes outside the closest pair get nothing.
    let diff: Vec<f64> = means.means[pi]
        .iter()
        .zip(&means.means[pj])
        .map(|(a, b)| a - b)
        .collect();
    let scale_i = lambda * -2.0 / means.counts[pi] as f64;
    let scale_j = lambda * 2.0 / means.counts[pj] as f64;
    let d_z: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            if lambda != 0.0 && y == pi {
                diff.iter().map(|d| scale_i * d).collect()
            } else if lambda != 0.0 && y == pj {
                diff.iter().map(|d| scale_j * d).collect()
            } else {
                vec![0.0; z.cols()]
            }
        })
        .collect();

    let breakdown = LossBreakdown {
        ce,
        separation,
        lambda,
        total: ce + lambda * separation,
        argmin_pair: (pi, pj),
    };
    Ok((breakdown, d_logits, d_z))
}
