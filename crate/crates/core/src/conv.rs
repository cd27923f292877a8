//! Frozen, seeded single-layer 1D feature extractor: valid cross-correlation
//! per filter, ReLU, then global average pooling. One feature per filter.
//!
//! The layer is never trained; weights are a seeded random projection drawn
//! uniformly from [-sqrt(1/N), +sqrt(1/N)] with zero biases, so the same
//! seed always yields the same features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Xorshift64Star;

#[derive(Debug, Error)]
pub enum ConvError {
    #[error("input length {len} shorter than kernel size {kernel}")]
    InputTooShort { len: usize, kernel: usize },
    #[error("empty sequence cannot be pooled")]
    EmptyPool,
    #[error("filter_count and kernel_size must be >= 1")]
    BadShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvExtractor {
    kernel_size: usize,
    filter_count: usize,
    weights: Vec<Vec<f64>>, // filter_count x kernel_size
    biases: Vec<f64>,
    init_seed: u64,
}

impl ConvExtractor {
    pub fn init(seed: u64, filter_count: usize, kernel_size: usize) -> Result<Self, ConvError> {
        if filter_count == 0 || kernel_size == 0 {
            return Err(ConvError::BadShape);
        }
        let bound = (1.0 / kernel_size as f64).sqrt();
        let mut rng = Xorshift64Star::new(seed);
        let weights = (0..filter_count)
            .map(|_| (0..kernel_size).map(|_| rng.uniform(-bound, bound)).collect())
            .collect();
        Ok(ConvExtractor {
            kernel_size,
            filter_count,
            weights,
            biases: vec![0.0; filter_count],
            init_seed: seed,
        })
    }

    /// Rebuild from serialized parts; shape consistency is the caller's
    /// contract (model_store validates lengths).
    pub fn from_parts(
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
        init_seed: u64,
    ) -> Result<Self, ConvError> {
        let filter_count = weights.len();
        let kernel_size = weights.first().map_or(0, Vec::len);
        if filter_count == 0 || kernel_size == 0 || biases.len() != filter_count {
            return Err(ConvError::BadShape);
        }
        Ok(ConvExtractor {
            kernel_size,
            filter_count,
            weights,
            biases,
            init_seed,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn filter_count(&self) -> usize {
        self.filter_count
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// conv -> ReLU -> global average pool for each sample, producing an
    /// n x filter_count feature matrix.
    pub fn extract_features(&self, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ConvError> {
        samples.iter().map(|s| self.extract_row(s)).collect()
    }

    pub fn extract_row(&self, sample: &[f64]) -> Result<Vec<f64>, ConvError> {
        let mut out = Vec::with_capacity(self.filter_count);
        for (kernel, &bias) in self.weights.iter().zip(&self.biases) {
            let conv = conv1d_valid(sample, kernel, bias)?;
            let activated = relu(&conv);
            out.push(global_avg_pool_one(&activated)?);
        }
        Ok(out)
    }
}

/// Valid cross-correlation: Y_i = bias + sum_j X_{i+j} * W_j, output length
/// L - N + 1. No kernel flip.
pub fn conv1d_valid(input: &[f64], kernel: &[f64], bias: f64) -> Result<Vec<f64>, ConvError> {
    let (l, n) = (input.len(), kernel.len());
    if l < n {
        return Err(ConvError::InputTooShort { len: l, kernel: n });
    }
    Ok((0..=l - n)
        .map(|i| {
            bias + kernel
                .iter()
                .zip(&input[i..i + n])
                .map(|(w, x)| w * x)
                .sum::<f64>()
        })
        .collect())
}

pub fn relu(seq: &[f64]) -> Vec<f64> {
    seq.iter().map(|&x| x.max(0.0)).collect()
}

fn global_avg_pool_one(seq: &[f64]) -> Result<f64, ConvError> {
    if seq.is_empty() {
        return Err(ConvError::EmptyPool);
    }
    Ok(seq.iter().sum::<f64>() / seq.len() as f64)
}

/// Mean of each filter's sequence, in filter order.
pub fn global_avg_pool(per_filter: &[Vec<f64>]) -> Result<Vec<f64>, ConvError> {
    per_filter.iter().map(|s| global_avg_pool_one(s)).collect()
}
