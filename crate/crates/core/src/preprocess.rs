//! Train/test splitting, z-score standardization fitted on training data
//! only, and layout validation for the conv extractor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Xorshift64Star;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("need at least 2 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("split ratio must be in (0,1), got {0}")]
    BadRatio(f64),
    #[error("cannot fit standardizer on an empty matrix")]
    EmptyMatrix,
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sequence length {len} shorter than kernel size {kernel}")]
    TooShortForKernel { len: usize, kernel: usize },
}

/// Deterministic train/test index partition. Reproducible from
/// (n, seed, ratio) alone: a Fisher-Yates shuffle of 0..n driven by the
/// crate's xorshift64* stream, first floor(ratio * n) indices are train.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

pub fn train_test_split(n: usize, ratio: f64, seed: u64) -> Result<SplitIndices, PreprocessError> {
    if n < 2 {
        return Err(PreprocessError::TooFewRows(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PreprocessError::BadRatio(ratio));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Xorshift64Star::new(seed);
    rng.shuffle(&mut order);
    let train_len = (ratio * n as f64).floor() as usize;
    let test_idx = order.split_off(train_len);
    Ok(SplitIndices {
        train_idx: order,
        test_idx,
        seed,
        ratio,
    })
}

/// Stratified variant: each class is split separately at the same ratio so
/// class proportions are preserved; per-class shuffles draw from streams
/// derived from (seed, class id).
pub fn stratified_train_test_split(
    labels: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<SplitIndices, PreprocessError> {
    let n = labels.len();
    if n < 2 {
        return Err(PreprocessError::TooFewRows(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PreprocessError::BadRatio(ratio));
    }
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..class_count {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = Xorshift64Star::new(crate::rng::derive_seed(seed, class as u64));
        rng.shuffle(&mut members);
        let train_len = (ratio * members.len() as f64).floor() as usize;
        test_idx.extend_from_slice(&members[train_len..]);
        train_idx.extend_from_slice(&members[..train_len]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitIndices {
        train_idx,
        test_idx,
        seed,
        ratio,
    })
}

/// Per-column mean and population standard deviation, fitted once on the
/// training matrix and immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub fitted_on: usize,
}

impl Standardizer {
    pub fn fit(train: &[Vec<f64>]) -> Result<Self, PreprocessError> {
        if train.is_empty() || train[0].is_empty() {
            return Err(PreprocessError::EmptyMatrix);
        }
        let n = train.len();
        let d = train[0].len();
        let mut means = vec![0.0; d];
        for row in train {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        // population variance (divide by N)
        let mut vars = vec![0.0; d];
        for row in train {
            for ((var, v), m) in vars.iter_mut().zip(row).zip(&means) {
                let dv = v - m;
                *var += dv * dv;
            }
        }
        let stds = vars.iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Standardizer {
            means,
            stds,
            fitted_on: n,
        })
    }

    /// z = (x - mean) / std per column; constant columns (std = 0) map to 0.
    pub fn transform(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, PreprocessError> {
        features.iter().map(|row| self.transform_row(row)).collect()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        if row.len() != self.means.len() {
            return Err(PreprocessError::DimensionMismatch {
                expected: self.means.len(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| if *s == 0.0 { 0.0 } else { (x - m) / s })
            .collect())
    }

    pub fn column_count(&self) -> usize {
        self.means.len()
    }
}

/// Validate that each row is long enough for the extractor's kernel. The
/// in-memory layout is already one single-channel sequence per row, so this
/// is a check, not a copy.
pub fn reshape_for_conv(
    features: &[Vec<f64>],
    kernel_size: usize,
) -> Result<&[Vec<f64>], PreprocessError> {
    if let Some(row) = features.first() {
        if row.len() < kernel_size {
            return Err(PreprocessError::TooShortForKernel {
                len: row.len(),
                kernel: kernel_size,
            });
        }
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_floor_rule() {
        let s = train_test_split(10, 0.8, 42).unwrap();
        assert_eq!(s.train_idx.len(), 8);
        assert_eq!(s.test_idx.len(), 2);

        let s = train_test_split(5, 0.8, 42).unwrap();
        assert_eq!(s.train_idx.len(), 4);
        assert_eq!(s.test_idx.len(), 1);
    }

    #[test]
    fn split_is_partition() {
        let s = train_test_split(10, 0.8, 42).unwrap();
        let mut all: Vec<usize> = s.train_idx.iter().chain(&s.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let a = train_test_split(100, 0.8, 42).unwrap();
        let b = train_test_split(100, 0.8, 42).unwrap();
        assert_eq!(a, b);
        let c = train_test_split(100, 0.8, 43).unwrap();
        assert_ne!(a.train_idx, c.train_idx);
    }

    #[test]
    fn split_rejects_degenerate_inputs() {
        assert!(train_test_split(1, 0.8, 42).is_err());
        assert!(train_test_split(10, 0.0, 42).is_err());
        assert!(train_test_split(10, 1.0, 42).is_err());
    }

    #[test]
    fn stratified_split_preserves_class_ratios() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let s = stratified_train_test_split(&labels, 0.8, 42).unwrap();
        assert_eq!(s.train_idx.len(), 80);
        assert_eq!(s.test_idx.len(), 20);
        for class in 0..4 {
            let in_test = s.test_idx.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(in_test, 5);
        }
    }

    #[test]
    fn fit_computes_population_std() {
        let m = vec![vec![1.0], vec![2.0], vec![3.0]];
        let s = Standardizer::fit(&m).unwrap();
        assert!((s.means[0] - 2.0).abs() < 1e-12);
        assert!((s.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert!((s.stds[0] - 0.816497).abs() < 1e-6);
    }

    #[test]
    fn constant_column_has_zero_std_and_transforms_to_zero() {
        let m = vec![vec![5.0], vec![5.0], vec![5.0]];
        let s = Standardizer::fit(&m).unwrap();
        assert_eq!(s.means[0], 5.0);
        assert_eq!(s.stds[0], 0.0);
        let z = s.transform(&m).unwrap();
        assert!(z.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn column_order_preserved() {
        let m = vec![vec![1.0, 10.0], vec![3.0, 30.0]];
        let s = Standardizer::fit(&m).unwrap();
        assert_eq!(s.means, vec![2.0, 20.0]);
        assert_eq!(s.stds.len(), 2);
    }

    #[test]
    fn transform_matches_hand_computation() {
        let m = vec![vec![1.0], vec![2.0], vec![3.0]];
        let s = Standardizer::fit(&m).unwrap();
        let z = s.transform(&m).unwrap();
        assert!((z[0][0] + 1.224745).abs() < 1e-6);
        assert!(z[1][0].abs() < 1e-12);
        assert!((z[2][0] - 1.224745).abs() < 1e-6);
    }

    #[test]
    fn transform_of_training_matrix_is_zero_mean_unit_std() {
        let mut rng = Xorshift64Star::new(5);
        let m: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..6).map(|_| rng.uniform(-3.0, 9.0)).collect())
            .collect();
        let s = Standardizer::fit(&m).unwrap();
        let z = s.transform(&m).unwrap();
        let zs = Standardizer::fit(&z).unwrap();
        for c in 0..6 {
            assert!(zs.means[c].abs() < 1e-9);
            assert!((zs.stds[c] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_rejects_dimension_mismatch() {
        let s = Standardizer::fit(&[vec![1.0, 2.0]]).unwrap();
        assert!(s.transform(&[vec![1.0]]).is_err());
    }

    #[test]
    fn reshape_validates_kernel() {
        let m = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let seqs = reshape_for_conv(&m, 3).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0], vec![1.0, 2.0, 3.0]);

        let narrow = vec![vec![1.0]];
        assert!(reshape_for_conv(&narrow, 3).is_err());
    }
}
