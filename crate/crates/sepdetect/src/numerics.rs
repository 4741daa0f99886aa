//! Deterministic 64-bit numerical primitives shared by the whole pipeline:
//! a dense row-major matrix, stable softmax / log-sum-exp, and a seeded RNG
//! that owns every source of randomness in the crate.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. `data.len() == rows * cols` always.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix data length {} does not equal {} x {}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {} has length {}, expected {}",
                    i,
                    row.len(),
                    cols
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: n,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self (rows x cols) * v (cols)` -> vector of length `rows`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec: vector length {} does not match {} columns",
                v.len(),
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o = acc;
        }
        Ok(out)
    }

    /// `self^T (cols x rows) * v (rows)` -> vector of length `cols`.
    pub fn matvec_transposed(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "matvec_transposed: vector length {} does not match {} rows",
                v.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            let row = self.row(i);
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        Ok(out)
    }
}

/// Returns an error if any entry of `v` is NaN or infinite.
pub fn ensure_finite(name: &str, v: &[f64]) -> Result<()> {
    for (i, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("{name}[{i}] = {x}")));
        }
    }
    Ok(())
}

/// Numerically stable softmax via max-subtraction.
///
/// Outputs are in `[0, 1]` and sum to 1 within 1e-12 for inputs of magnitude
/// up to around 1e3 (and far beyond).
pub fn stable_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    ensure_finite("softmax input", v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(out)
}

/// `log(sum(exp(v_i)))` via max-subtraction.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidInput("log_sum_exp of an empty vector".into()));
    }
    ensure_finite("log_sum_exp input", v)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Seeded deterministic RNG. Identical seeds produce identical streams; the
/// underlying u64 stream is the ChaCha8 keystream, which is fixed by the
/// algorithm and independent of platform.
///
/// Every source of randomness in the crate flows through this type. Instances
/// are single-owner; clone state is never shared across tasks.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the Box-Muller transform (cosine branch).
    /// Consumes exactly two u64s from the stream.
    pub fn next_gaussian(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `[0, n)`. `n` must be nonzero.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.inner.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_index(i + 1);
            slice.swap(i, j);
        }
    }
}

/// `n` draws from N(mean, std^2), deterministic per RNG state.
pub fn gaussian_sample(rng: &mut SeededRng, mean: f64, std: f64, n: usize) -> Result<Vec<f64>> {
    if !mean.is_finite() || !std.is_finite() {
        return Err(Error::NonFinite(format!("gaussian mean {mean}, std {std}")));
    }
    if std < 0.0 {
        return Err(Error::InvalidInput(format!("negative std {std}")));
    }
    Ok((0..n).map(|_| mean + std * rng.next_gaussian()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetry() {
        let p = stable_softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_inputs_no_overflow() {
        let p = stable_softmax(&[1000.0, 1000.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_high_precision_oracle() {
        // exp(k) / sum(exp(1..=3)) evaluated at 40 decimal digits.
        let expected = [0.09003057317038046, 0.24472847105479765, 0.6652409557748219];
        let p = stable_softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (a, e) in p.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "got {a}, expected {e}");
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(stable_softmax(&[]).is_err());
        assert!(stable_softmax(&[1.0, f64::NAN]).is_err());
        assert!(stable_softmax(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn log_sum_exp_single_element_is_identity() {
        for x in [-5.0, 0.0, 2.5, 900.0] {
            assert_eq!(log_sum_exp(&[x]).unwrap(), x);
        }
    }

    #[test]
    fn log_sum_exp_pairs() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_rejects_empty() {
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn gaussian_zero_std_is_degenerate() {
        let mut rng = SeededRng::new(3);
        let v = gaussian_sample(&mut rng, 2.5, 0.0, 17).unwrap();
        assert!(v.iter().all(|&x| x == 2.5));
    }

    #[test]
    fn gaussian_rejects_negative_std() {
        let mut rng = SeededRng::new(3);
        assert!(gaussian_sample(&mut rng, 0.0, -1.0, 4).is_err());
    }

    #[test]
    fn gaussian_same_seed_same_stream() {
        let a = gaussian_sample(&mut SeededRng::new(42), 0.0, 1.0, 64).unwrap();
        let b = gaussian_sample(&mut SeededRng::new(42), 0.0, 1.0, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_sample_mean_statistical_oracle() {
        // Law of large numbers: sample mean of 1e5 standard normals is within
        // +-0.02 of zero (about 6 standard errors).
        let v = gaussian_sample(&mut SeededRng::new(7), 0.0, 1.0, 100_000).unwrap();
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn shuffle_is_deterministic() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b: Vec<u32> = (0..50).collect();
        SeededRng::new(9).shuffle(&mut a);
        SeededRng::new(9).shuffle(&mut b);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn matvec_shapes() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0, 11.0]);
        assert_eq!(
            m.matvec_transposed(&[1.0, 0.0, 1.0]).unwrap(),
            vec![6.0, 8.0]
        );
        assert!(m.matvec(&[1.0]).is_err());
        assert!(m.matvec_transposed(&[1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(
            v in proptest::collection::vec(-100.0f64..100.0, 1..8),
            c in -500.0f64..500.0,
        ) {
            let base = stable_softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let other = stable_softmax(&shifted).unwrap();
            for (a, b) in base.iter().zip(&other) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_preserves_argmax(v in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
            let p = stable_softmax(&v).unwrap();
            let arg_in = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let arg_out = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            prop_assert_eq!(arg_in, arg_out);
        }

        #[test]
        fn softmax_outputs_normalized(v in proptest::collection::vec(-1000.0f64..1000.0, 1..10)) {
            let p = stable_softmax(&v).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn log_sum_exp_bounds(v in proptest::collection::vec(-100.0f64..100.0, 1..10)) {
            let lse = log_sum_exp(&v).unwrap();
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max - 1e-12);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
        }
    }
}
