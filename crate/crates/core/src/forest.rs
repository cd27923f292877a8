//! Random forest: CART-style trees grown on bootstrap samples with Gini
//! impurity splits, aggregated by majority vote.
//!
//! Everything is deterministic given (data, config, seed): per-tree RNG
//! streams derive only from (seed, tree index), threshold candidates sit at
//! midpoints of consecutive distinct values, and all ties break toward the
//! smaller threshold, then the smaller feature index; vote ties break toward
//! the smallest class id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, Xorshift64Star};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("class proportions must sum to 1 (got {0})")]
    BadProportions(f64),
    #[error("need at least 2 rows with 2 classes present, got {rows} rows, {classes} classes")]
    DegenerateInput { rows: usize, classes: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid forest config: {0}")]
    BadConfig(String),
}

/// Gini impurity of a class-proportion vector: 1 - sum(p_i^2).
pub fn gini(proportions: &[f64]) -> Result<f64, ForestError> {
    let sum: f64 = proportions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || proportions.iter().any(|&p| p < 0.0) {
        return Err(ForestError::BadProportions(sum));
    }
    Ok(1.0 - proportions.iter().map(|p| p * p).sum::<f64>())
}

fn gini_from_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
        counts: Vec<usize>,
    },
}

/// Flat arena of nodes; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { class, .. } => return *class,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        fn walk(tree: &Tree, idx: usize, depth: usize) -> usize {
            match &tree.nodes[idx] {
                TreeNode::Leaf { .. } => depth,
                TreeNode::Internal { left, right, .. } => {
                    walk(tree, *left, depth + 1).max(walk(tree, *right, depth + 1))
                }
            }
        }
        walk(self, 0, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub tree_count: usize,
    /// None = unbounded.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Candidate features per node; None = ceil(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            tree_count: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 42,
        }
    }
}

impl ForestConfig {
    fn validate(&self, d: usize) -> Result<(), ForestError> {
        if self.tree_count == 0 {
            return Err(ForestError::BadConfig("tree_count must be >= 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::BadConfig("max_depth must be >= 1".into()));
        }
        if let Some(m) = self.features_per_split {
            if m == 0 || m > d {
                return Err(ForestError::BadConfig(format!(
                    "features_per_split must be in [1, {d}], got {m}"
                )));
            }
        }
        Ok(())
    }

    fn effective_m(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub class_count: usize,
    pub feature_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub weighted_gini: f64,
}

/// Best (feature, threshold) over the candidate features, minimizing the
/// size-weighted child Gini. Thresholds are midpoints between consecutive
/// distinct sorted values. Returns None when the node is pure or no split
/// reduces impurity.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[usize],
    indices: &[usize],
    candidates: &[usize],
    class_count: usize,
) -> Option<Split> {
    let n = indices.len();
    if n < 2 {
        return None;
    }
    let mut total_counts = vec![0usize; class_count];
    for &i in indices {
        total_counts[y[i]] += 1;
    }
    let parent = gini_from_counts(&total_counts, n);
    if parent == 0.0 {
        return None;
    }

    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &feature in candidates {
        pairs.clear();
        pairs.extend(indices.iter().map(|&i| (x[i][feature], y[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

        let mut left_counts = vec![0usize; class_count];
        let mut left_n = 0usize;
        for k in 0..n - 1 {
            left_counts[pairs[k].1] += 1;
            left_n += 1;
            if pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let threshold = 0.5 * (pairs[k].0 + pairs[k + 1].0);
            let right_n = n - left_n;
            let mut right_counts = vec![0usize; class_count];
            for (rc, (tc, lc)) in right_counts
                .iter_mut()
                .zip(total_counts.iter().zip(&left_counts))
            {
                *rc = tc - lc;
            }
            let wg = (left_n as f64 * gini_from_counts(&left_counts, left_n)
                + right_n as f64 * gini_from_counts(&right_counts, right_n))
                / n as f64;
            let candidate = Split {
                feature,
                threshold,
                weighted_gini: wg,
            };
            let better = match best {
                None => true,
                Some(b) => {
                    wg < b.weighted_gini
                        || (wg == b.weighted_gini
                            && (threshold < b.threshold
                                || (threshold == b.threshold && feature < b.feature)))
                }
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    best.filter(|s| s.weighted_gini < parent)
}

fn make_leaf(y: &[usize], indices: &[usize], class_count: usize) -> TreeNode {
    let mut counts = vec![0usize; class_count];
    for &i in indices {
        counts[y[i]] += 1;
    }
    // argmax with smallest-id tie rule
    let class = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    TreeNode::Leaf { class, counts }
}

fn grow(
    nodes: &mut Vec<TreeNode>,
    x: &[Vec<f64>],
    y: &[usize],
    indices: &[usize],
    depth: usize,
    config: &ForestConfig,
    m: usize,
    d: usize,
    class_count: usize,
    rng: &mut Xorshift64Star,
) -> usize {
    let stop = indices.len() < config.min_samples_split
        || config.max_depth.is_some_and(|md| depth >= md);
    let split = if stop {
        None
    } else {
        let candidates = rng.sample_indices(d, m);
        best_split(x, y, indices, &candidates, class_count)
    };
    match split {
        None => {
            nodes.push(make_leaf(y, indices, class_count));
            nodes.len() - 1
        }
        Some(s) => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                .iter()
                .partition(|&&i| x[i][s.feature] <= s.threshold);
            let me = nodes.len();
            nodes.push(TreeNode::Internal {
                feature: s.feature,
                threshold: s.threshold,
                left: 0,
                right: 0,
            });
            let left = grow(nodes, x, y, &left_idx, depth + 1, config, m, d, class_count, rng);
            let right = grow(nodes, x, y, &right_idx, depth + 1, config, m, d, class_count, rng);
            if let TreeNode::Internal {
                left: l, right: r, ..
            } = &mut nodes[me]
            {
                *l = left;
                *r = right;
            }
            me
        }
    }
}

pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[usize],
    class_count: usize,
    config: &ForestConfig,
) -> Result<ForestModel, ForestError> {
    let n = x.len();
    let present: std::collections::BTreeSet<usize> = y.iter().copied().collect();
    if n < 2 || present.len() < 2 {
        return Err(ForestError::DegenerateInput {
            rows: n,
            classes: present.len(),
        });
    }
    let d = x[0].len();
    config.validate(d)?;
    let m = config.effective_m(d);

    let mut trees = Vec::with_capacity(config.tree_count);
    for t in 0..config.tree_count {
        let mut rng = Xorshift64Star::new(derive_seed(config.seed, t as u64));
        let indices: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.next_below(n)).collect()
        } else {
            (0..n).collect()
        };
        let mut nodes = Vec::new();
        grow(
            &mut nodes, x, y, &indices, 0, config, m, d, class_count, &mut rng,
        );
        trees.push(Tree { nodes });
    }
    Ok(ForestModel {
        trees,
        config: config.clone(),
        class_count,
        feature_count: d,
    })
}

impl ForestModel {
    fn check_dim(&self, row: &[f64]) -> Result<(), ForestError> {
        if row.len() != self.feature_count {
            return Err(ForestError::DimensionMismatch {
                expected: self.feature_count,
                got: row.len(),
            });
        }
        Ok(())
    }

    fn vote_counts(&self, row: &[f64]) -> Vec<usize> {
        let mut votes = vec![0usize; self.class_count];
        for tree in &self.trees {
            votes[tree.predict_row(row)] += 1;
        }
        votes
    }

    /// Majority vote; ties break toward the smallest class id.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>, ForestError> {
        x.iter()
            .map(|row| {
                self.check_dim(row)?;
                let votes = self.vote_counts(row);
                Ok(argmax_smallest(&votes))
            })
            .collect()
    }

    /// Fraction of trees voting each class; rows sum to 1.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ForestError> {
        let t = self.trees.len() as f64;
        x.iter()
            .map(|row| {
                self.check_dim(row)?;
                Ok(self
                    .vote_counts(row)
                    .iter()
                    .map(|&v| v as f64 / t)
                    .collect())
            })
            .collect()
    }
}

pub(crate) fn argmax_smallest(values: &[usize]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub(crate) fn argmax_smallest_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
