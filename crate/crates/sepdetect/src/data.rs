//! Synthetic scenario generation, dataset file I/O, deterministic splits and
//! stratified mini-batches.
//!
//! Three scenario geometries are supported. `separated` places Gaussian
//! clusters with centers a full gap apart. `near_boundary` spaces two
//! clusters by twice their std so the manifolds nearly touch. `pocket` embeds
//! a sub-cluster of wrong-label points inside the first class's cluster.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, Matrix, SeededRng};

/// N feature vectors of dimension D with integer class labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        ensure_finite("features", features.data())?;
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let rows: Vec<Vec<f64>> = indices
            .iter()
            .map(|&i| self.features.row(i).to_vec())
            .collect();
        LabeledDataset {
            features: Matrix::from_rows(&rows).expect("uniform row widths"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Row indices grouped by label; outer index is the class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Number of samples carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Separated,
    NearBoundary,
    Pocket,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioKind::Separated => write!(f, "separated"),
            ScenarioKind::NearBoundary => write!(f, "near_boundary"),
            ScenarioKind::Pocket => write!(f, "pocket"),
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separated" => Ok(ScenarioKind::Separated),
            "near_boundary" | "near-boundary" => Ok(ScenarioKind::NearBoundary),
            "pocket" => Ok(ScenarioKind::Pocket),
            other => Err(Error::InvalidInput(format!(
                "unknown scenario kind '{other}'"
            ))),
        }
    }
}

/// Parameters for [`gen_scenario`].
///
/// Cluster centers sit on the first feature axis. For `separated` adjacent
/// centers are `gap` apart; for `near_boundary` the spacing is fixed at
/// `2 * std` regardless of `gap`; for `pocket` the two main clusters are
/// `gap` apart and `pocket_size` of class 1's points are drawn around
/// `pocket_offset` on that axis (so offset 0 puts the pocket exactly at
/// class 0's center).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub samples_per_class: usize,
    pub dim: usize,
    pub std: f64,
    pub gap: f64,
    pub num_classes: usize,
    pub pocket_size: usize,
    pub pocket_offset: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_class < 1 {
            return Err(Error::InvalidInput("samples_per_class must be >= 1".into()));
        }
        if self.dim < 1 {
            return Err(Error::InvalidInput("dim must be >= 1".into()));
        }
        if !self.std.is_finite() || self.std < 0.0 {
            return Err(Error::InvalidInput(format!(
                "std must be finite and >= 0, got {}",
                self.std
            )));
        }
        if !self.gap.is_finite() || self.gap < 0.0 {
            return Err(Error::InvalidInput(format!(
                "gap must be finite and >= 0, got {}",
                self.gap
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidInput("num_classes must be >= 2".into()));
        }
        match self.kind {
            ScenarioKind::Separated => {}
            ScenarioKind::NearBoundary | ScenarioKind::Pocket => {
                if self.num_classes != 2 {
                    return Err(Error::InvalidInput(format!(
                        "{} scenario is binary; got {} classes",
                        self.kind, self.num_classes
                    )));
                }
            }
        }
        if self.kind == ScenarioKind::Pocket {
            if self.pocket_size < 1 || self.pocket_size >= self.samples_per_class {
                return Err(Error::InvalidInput(format!(
                    "pocket_size must be in [1, samples_per_class), got {}",
                    self.pocket_size
                )));
            }
            if !self.pocket_offset.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pocket_offset {}",
                    self.pocket_offset
                )));
            }
        }
        Ok(())
    }
}

/// Draws the configured scenario. Deterministic per seed: samples are emitted
/// class by class, each coordinate consuming one Gaussian draw.
pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let spacing = match cfg.kind {
        ScenarioKind::NearBoundary => 2.0 * cfg.std,
        _ => cfg.gap,
    };
    let mut rng = SeededRng::new(cfg.seed);
    let n = cfg.num_classes * cfg.samples_per_class;
    let mut features = Matrix::zeros(n, cfg.dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for class in 0..cfg.num_classes {
        let main_center = class as f64 * spacing;
        for s in 0..cfg.samples_per_class {
            let in_pocket = cfg.kind == ScenarioKind::Pocket
                && class == 1
                && s >= cfg.samples_per_class - cfg.pocket_size;
            let center0 = if in_pocket {
                cfg.pocket_offset
            } else {
                main_center
            };
            let out = features.row_mut(row);
            for (d, cell) in out.iter_mut().enumerate() {
                let center = if d == 0 { center0 } else { 0.0 };
                *cell = center + cfg.std * rng.next_gaussian();
            }
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new(features, labels, cfg.num_classes)
}

fn float_cell(x: f64) -> String {
    // 17 significant digits: round-trips any finite f64 bit-exactly.
    format!("{x:.16e}")
}

/// Writes the dataset as CSV: header `f0,...,f{D-1},label`, LF endings,
/// floats at 17 significant digits so a reload is bit-exact.
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for d in 0..ds.dim() {
        out.push_str(&format!("f{d},"));
    }
    out.push_str("label\n");
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        for v in x {
            out.push_str(&float_cell(*v));
            out.push(',');
        }
        out.push_str(&format!("{y}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads a dataset CSV. The class count is `num_classes` when given,
/// otherwise `max label + 1`. Schema violations name the offending 1-based
/// line.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, num_classes)
}

fn parse_csv(text: &str, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || *cols.last().unwrap() != "label" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must be f0,...,f{{D-1}},label; got '{header}'"),
        });
    }
    let dim = cols.len() - 1;
    for (d, col) in cols[..dim].iter().enumerate() {
        if *col != format!("f{d}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column 'f{d}', got '{col}'"),
            });
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let cells: Vec<&str> = raw.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} cells, got {}", dim + 1, cells.len()),
            });
        }
        let mut row = Vec::with_capacity(dim);
        for (d, cell) in cells[..dim].iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell '{cell}' in column f{d}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value '{cell}' in column f{d}"),
                });
            }
            row.push(v);
        }
        let label_cell = cells[dim].trim();
        let label: i64 = label_cell.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("non-integer label '{label_cell}'"),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative label {label}"),
            });
        }
        let label = label as usize;
        if let Some(k) = num_classes {
            if label >= k {
                return Err(Error::Parse {
                    line,
                    msg: format!("label {label} out of range for {k} declared classes"),
                });
            }
        }
        rows.push(row);
        labels.push(label);
    }

    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let features = if rows.is_empty() {
        Matrix::zeros(0, dim)
    } else {
        Matrix::from_rows(&rows)?
    };
    LabeledDataset::new(features, labels, k)
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    x: Vec<f64>,
    y: i64,
}

/// JSONL variant: one `{"x": [..], "y": int}` object per line.
pub fn save_jsonl(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        let row = JsonlRow {
            x: x.to_vec(),
            y: y as i64,
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_jsonl(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: format!("bad jsonl row: {e}"),
        })?;
        if row.y < 0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative label {}", row.y),
            });
        }
        if let Some(d) = dim {
            if row.x.len() != d {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} features, got {}", d, row.x.len()),
                });
            }
        } else {
            dim = Some(row.x.len());
        }
        if let Some(bad) = row.x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite feature {bad}"),
            });
        }
        let label = row.y as usize;
        if let Some(k) = num_classes {
            if label >= k {
                return Err(Error::Parse {
                    line,
                    msg: format!("label {label} out of range for {k} declared classes"),
                });
            }
        }
        rows.push(row.x);
        labels.push(label);
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let features = if rows.is_empty() {
        Matrix::zeros(0, dim.unwrap_or(0))
    } else {
        Matrix::from_rows(&rows)?
    };
    LabeledDataset::new(features, labels, k)
}

/// Loads a dataset, choosing CSV or JSONL by file extension.
pub fn load_dataset(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => load_jsonl(path, num_classes),
        _ => load_csv(path, num_classes),
    }
}

/// Saves a dataset, choosing CSV or JSONL by file extension.
pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => save_jsonl(ds, path),
        _ => save_csv(ds, path),
    }
}

/// Stratified train/test split. Each class is shuffled and cut at
/// `round(train_fraction * count)`, clamped so both sides keep at least one
/// sample; row order within each side follows the input dataset.
pub fn split_dataset(
    ds: &LabeledDataset,
    train_fraction: f64,
    rng: &mut SeededRng,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let groups = ds.class_indices();
    for (c, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "class {c} has {} samples; need at least 2 to split",
                g.len()
            )));
        }
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for mut g in groups {
        rng.shuffle(&mut g);
        let n = g.len();
        let take = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        train_idx.extend_from_slice(&g[..take]);
        test_idx.extend_from_slice(&g[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

/// Splits one epoch of `ds` into shuffled mini-batches where every batch
/// contains at least one sample of every class and every sample appears
/// exactly once.
///
/// Batches have `batch_size` rows except the last, which holds the
/// remainder; a remainder too small to cover all classes is folded into the
/// previous batch. If some class has fewer samples than the implied batch
/// count, the count is capped there and sizes rebalance upward.
pub fn stratified_batches(
    ds: &LabeledDataset,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<Vec<LabeledDataset>> {
    let k = ds.num_classes();
    if batch_size < k {
        return Err(Error::InvalidInput(format!(
            "batch_size {batch_size} is smaller than the class count {k}; \
             per-batch class means would be undefined"
        )));
    }
    if ds.is_empty() {
        return Err(Error::InvalidInput("cannot batch an empty dataset".into()));
    }
    let mut groups = ds.class_indices();
    for (c, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::InvalidInput(format!(
                "class {c} has no samples; batches cannot be class-complete"
            )));
        }
    }
    let n = ds.len();
    let min_count = groups.iter().map(Vec::len).min().unwrap_or(0);
    let wanted = n.div_ceil(batch_size);
    let sizes: Vec<usize> = if wanted > min_count {
        // Not enough of the scarcest class to seed `wanted` batches; use
        // fewer, near-equal batches instead.
        let nb = min_count;
        let base = n / nb;
        let rem = n % nb;
        (0..nb).map(|b| base + usize::from(b < rem)).collect()
    } else {
        let nb = wanted;
        let last = n - (nb - 1) * batch_size;
        if nb > 1 && last < k {
            let mut sizes = vec![batch_size; nb - 1];
            *sizes.last_mut().unwrap() += last;
            sizes
        } else {
            let mut sizes = vec![batch_size; nb - 1];
            sizes.push(last);
            sizes
        }
    };

    for g in &mut groups {
        rng.shuffle(g);
    }
    let mut batches: Vec<Vec<usize>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    // Seed every batch with one sample of every class, then deal the rest.
    for batch in &mut batches {
        for g in &mut groups {
            batch.push(g.pop().expect("class count >= batch count"));
        }
    }
    let mut leftover: Vec<usize> = groups.into_iter().flatten().collect();
    rng.shuffle(&mut leftover);
    let mut cursor = leftover.into_iter();
    for (batch, &size) in batches.iter_mut().zip(&sizes) {
        while batch.len() < size {
            batch.push(cursor.next().expect("sizes sum to n"));
        }
    }
    debug_assert!(cursor.next().is_none());

    Ok(batches
        .into_iter()
        .map(|mut idx| {
            rng.shuffle(&mut idx);
            ds.select(&idx)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn scenario(kind: ScenarioKind, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            kind,
            samples_per_class: 50,
            dim: 2,
            std: 0.5,
            gap: 5.0,
            num_classes: 2,
            pocket_size: 5,
            pocket_offset: 0.0,
            seed,
        }
    }

    #[test]
    fn separated_count_contract() {
        let ds = gen_scenario(&scenario(ScenarioKind::Separated, 7)).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.class_counts(), vec![50, 50]);
        assert_eq!(ds.dim(), 2);
    }

    #[test]
    fn scenario_is_deterministic() {
        let a = gen_scenario(&scenario(ScenarioKind::Pocket, 11)).unwrap();
        let b = gen_scenario(&scenario(ScenarioKind::Pocket, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pocket_points_live_among_class_a() {
        // Pocket centered exactly on class 0's center: a brute-force 5-NN
        // check should see mostly class-0 neighbors around each pocket point.
        let mut cfg = scenario(ScenarioKind::Pocket, 3);
        cfg.samples_per_class = 60;
        cfg.pocket_size = 5;
        let ds = gen_scenario(&cfg).unwrap();
        let pocket_rows: Vec<usize> = (ds.len() - cfg.pocket_size..ds.len()).collect();
        for &p in &pocket_rows {
            let (xp, _) = ds.sample(p);
            let mut dist: Vec<(f64, usize)> = (0..ds.len())
                .filter(|&i| i != p)
                .map(|i| {
                    let (xi, yi) = ds.sample(i);
                    let d2: f64 = xp.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, yi)
                })
                .collect();
            dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let class_a_votes = dist[..5].iter().filter(|(_, y)| *y == 0).count();
            assert!(
                class_a_votes >= 3,
                "pocket row {p}: only {class_a_votes}/5 neighbors in class 0"
            );
        }
    }

    #[test]
    fn separated_wide_gap_is_linearly_learnable() {
        // Oracle: a nearest-centroid classifier gets 100% on gap = 10 * std.
        let mut cfg = scenario(ScenarioKind::Separated, 5);
        cfg.gap = 10.0 * cfg.std;
        let ds = gen_scenario(&cfg).unwrap();
        let mut centroids = vec![vec![0.0; ds.dim()]; ds.num_classes()];
        let counts = ds.class_counts();
        for i in 0..ds.len() {
            let (x, y) = ds.sample(i);
            for (c, v) in centroids[y].iter_mut().zip(x) {
                *c += v;
            }
        }
        for (c, &n) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= n as f64;
            }
        }
        for i in 0..ds.len() {
            let (x, y) = ds.sample(i);
            let pred = centroids
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
                    let db: f64 = b.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .0;
            assert_eq!(pred, y, "row {i} misclassified by nearest centroid");
        }
    }

    #[test]
    fn zero_std_collapses_clusters() {
        let mut cfg = scenario(ScenarioKind::Pocket, 1);
        cfg.std = 0.0;
        cfg.pocket_offset = 1.25;
        let ds = gen_scenario(&cfg).unwrap();
        let mut distinct: Vec<Vec<u64>> = Vec::new();
        for i in 0..ds.len() {
            let bits: Vec<u64> = ds.sample(i).0.iter().map(|v| v.to_bits()).collect();
            if !distinct.contains(&bits) {
                distinct.push(bits);
            }
        }
        // One point per sub-cluster: class 0, class 1 main, pocket.
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn near_boundary_uses_two_std_spacing() {
        let mut cfg = scenario(ScenarioKind::NearBoundary, 2);
        cfg.std = 0.0; // degenerate clusters expose the centers exactly
        let ds = gen_scenario(&cfg).unwrap();
        assert_eq!(ds.sample(0).0[0], 0.0);
        assert_eq!(ds.sample(ds.len() - 1).0[0], 0.0);
        let mut cfg2 = scenario(ScenarioKind::NearBoundary, 2);
        cfg2.std = 1.5;
        let ds2 = gen_scenario(&cfg2).unwrap();
        // Empirical class means on axis 0 should straddle roughly 2 * std.
        let (mut m0, mut m1) = (0.0, 0.0);
        for i in 0..ds2.len() {
            let (x, y) = ds2.sample(i);
            if y == 0 {
                m0 += x[0];
            } else {
                m1 += x[0];
            }
        }
        let spacing = (m1 - m0) / 50.0;
        assert!((spacing - 3.0).abs() < 1.0, "spacing {spacing}");
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut cfg = scenario(ScenarioKind::Pocket, 0);
        cfg.pocket_size = 50;
        assert!(gen_scenario(&cfg).is_err());
        let mut cfg = scenario(ScenarioKind::NearBoundary, 0);
        cfg.num_classes = 3;
        assert!(gen_scenario(&cfg).is_err());
        let mut cfg = scenario(ScenarioKind::Separated, 0);
        cfg.std = -1.0;
        assert!(gen_scenario(&cfg).is_err());
    }

    #[test]
    fn csv_single_row() {
        let ds = parse_csv("f0,f1,label\n0.5,-1.25,1\n", None).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.sample(0), (&[0.5, -1.25][..], 1));
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn csv_header_only_is_empty() {
        let ds = parse_csv("f0,f1,f2,label\n", None).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.num_classes(), 0);
    }

    #[test]
    fn csv_errors_name_lines() {
        let err = parse_csv("", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");

        let err = parse_csv("f0,label\n1.0,0\nfoo,1\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let err = parse_csv("f0,label\n1.0,-2\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let err = parse_csv("f0,f1,label\n1.0,0\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let err = parse_csv("f0,label\n1.0,7\n", Some(3)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let err = parse_csv("x0,label\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ds = gen_scenario(&scenario(ScenarioKind::NearBoundary, 13)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, Some(ds.num_classes())).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = gen_scenario(&scenario(ScenarioKind::Separated, 21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        save_jsonl(&ds, &path).unwrap();
        let back = load_jsonl(&path, None).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn split_keeps_class_ratios() {
        let mut cfg = scenario(ScenarioKind::Separated, 17);
        cfg.samples_per_class = 100;
        let ds = gen_scenario(&cfg).unwrap();
        let (train, test) = split_dataset(&ds, 0.8, &mut SeededRng::new(5)).unwrap();
        assert_eq!(train.class_counts(), vec![80, 80]);
        assert_eq!(test.class_counts(), vec![20, 20]);
    }

    #[test]
    fn split_is_deterministic_and_exact() {
        let ds = gen_scenario(&scenario(ScenarioKind::Pocket, 23)).unwrap();
        let (tr1, te1) = split_dataset(&ds, 0.7, &mut SeededRng::new(4)).unwrap();
        let (tr2, te2) = split_dataset(&ds, 0.7, &mut SeededRng::new(4)).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);

        // Union of the two sides is the input as a multiset.
        let mut seen: BTreeMap<Vec<u64>, i64> = BTreeMap::new();
        for ds_part in [&tr1, &te1] {
            for i in 0..ds_part.len() {
                let (x, y) = ds_part.sample(i);
                let mut key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                key.push(y as u64);
                *seen.entry(key).or_insert(0) += 1;
            }
        }
        for i in 0..ds.len() {
            let (x, y) = ds.sample(i);
            let mut key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            key.push(y as u64);
            *seen.entry(key).or_insert(0) -= 1;
        }
        assert!(seen.values().all(|&c| c == 0));
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let features = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let ds = LabeledDataset::new(features, vec![0, 0, 1], 2).unwrap();
        assert!(split_dataset(&ds, 0.5, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn batches_single_when_batch_covers_all() {
        let ds = gen_scenario(&scenario(ScenarioKind::Separated, 2)).unwrap();
        let batches = stratified_batches(&ds, 1000, &mut SeededRng::new(8)).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), ds.len());
    }

    #[test]
    fn batches_cover_epoch_exactly_once() {
        let ds = gen_scenario(&scenario(ScenarioKind::Pocket, 6)).unwrap();
        let batches = stratified_batches(&ds, 32, &mut SeededRng::new(1)).unwrap();
        let total: usize = batches.iter().map(LabeledDataset::len).sum();
        assert_eq!(total, ds.len());
        // Multiset equality with the source dataset.
        let mut seen: BTreeMap<Vec<u64>, i64> = BTreeMap::new();
        for b in &batches {
            for i in 0..b.len() {
                let (x, y) = b.sample(i);
                let mut key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                key.push(y as u64);
                *seen.entry(key).or_insert(0) += 1;
            }
        }
        for i in 0..ds.len() {
            let (x, y) = ds.sample(i);
            let mut key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            key.push(y as u64);
            *seen.entry(key).or_insert(0) -= 1;
        }
        assert!(seen.values().all(|&c| c == 0));
    }

    #[test]
    fn batches_fold_small_remainder() {
        // 100 samples, batch 33 -> remainder 1 < K, folded: 33, 33, 34.
        let ds = gen_scenario(&scenario(ScenarioKind::Separated, 9)).unwrap();
        let batches = stratified_batches(&ds, 33, &mut SeededRng::new(2)).unwrap();
        let sizes: Vec<usize> = batches.iter().map(LabeledDataset::len).collect();
        assert_eq!(sizes, vec![33, 33, 34]);
    }

    #[test]
    fn batches_reject_batch_smaller_than_class_count() {
        let ds = gen_scenario(&scenario(ScenarioKind::Separated, 9)).unwrap();
        assert!(stratified_batches(&ds, 1, &mut SeededRng::new(2)).is_err());
    }

    proptest! {
        #[test]
        fn every_batch_has_every_class(
            seed in 0u64..5000,
            per_class in 3usize..40,
            batch_size in 2usize..25,
        ) {
            let cfg = ScenarioConfig {
                samples_per_class: per_class,
                ..scenario(ScenarioKind::Separated, seed)
            };
            let ds = gen_scenario(&cfg).unwrap();
            let batches = stratified_batches(&ds, batch_size, &mut SeededRng::new(seed)).unwrap();
            let total: usize = batches.iter().map(LabeledDataset::len).sum();
            prop_assert_eq!(total, ds.len());
            for b in &batches {
                let counts = b.class_counts();
                prop_assert!(counts.iter().all(|&c| c >= 1), "batch missing a class: {:?}", counts);
            }
        }

        #[test]
        fn csv_cells_round_trip(v in proptest::collection::vec(-1e12f64..1e12, 1..6)) {
            let ds = LabeledDataset::new(
                Matrix::from_rows(std::slice::from_ref(&v)).unwrap(),
                vec![0],
                1,
            ).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("row.csv");
            save_csv(&ds, &path).unwrap();
            let back = load_csv(&path, Some(1)).unwrap();
            prop_assert_eq!(ds, back);
        }
    }
}
