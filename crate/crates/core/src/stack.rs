//! Stacking ensemble: random forest and MLP base learners over conv
//! features, combined by a multinomial logistic-regression meta-learner
//! trained on out-of-fold base probabilities.
//!
//! Meta-feature layout is fixed and versioned: the forest probability block
//! first, then the MLP block, then (only when passthrough is enabled) the
//! raw conv features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::{ConvError, ConvExtractor};
use crate::forest::{argmax_smallest_f64, fit_forest, ForestConfig, ForestError, ForestModel};
use crate::ingest::{ColumnSpec, FlowTable, LabelCodec};
use crate::metrics::{stratified_kfold, BoxError, MetricsError};
use crate::mlp::{fit_mlp, MlpConfig, MlpError, MlpModel};
use crate::preprocess::{
    stratified_train_test_split, train_test_split, PreprocessError, SplitIndices, Standardizer,
};
use crate::rng::{derive_seed, Xorshift64Star};

#[derive(Debug, Error)]
pub enum StackError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Folding(#[from] MetricsError),
    #[error("base learner failed: {0}")]
    BaseLearner(#[source] BoxError),
    #[error("meta_folds must be >= 2, got {0}")]
    BadFoldCount(usize),
    #[error("expected rows of width {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("non-finite value in input row")]
    NonFiniteInput,
    #[error("input has fewer than 2 classes")]
    SingleClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub meta_folds: usize,
    pub seed: u64,
    pub meta_learning_rate: f64,
    pub meta_epochs: usize,
    /// Append raw conv features to the meta input alongside base
    /// probabilities.
    pub passthrough: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            meta_folds: 5,
            seed: 42,
            meta_learning_rate: 0.1,
            meta_epochs: 300,
            passthrough: false,
        }
    }
}

/// Multinomial logistic regression over concatenated base probability
/// vectors. Weights are class_count x input_width, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLearner {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub input_width: usize,
    pub class_count: usize,
}

impl MetaLearner {
    /// Full-batch gradient descent on softmax cross-entropy.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        class_count: usize,
        learning_rate: f64,
        epochs: usize,
        seed: u64,
    ) -> Self {
        let input_width = x.first().map_or(0, Vec::len);
        let bound = (1.0 / input_width.max(1) as f64).sqrt();
        let mut rng = Xorshift64Star::new(seed);
        let mut weights: Vec<f64> = (0..class_count * input_width)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let mut biases = vec![0.0; class_count];
        let n = x.len().max(1) as f64;
        for _ in 0..epochs {
            let mut dw = vec![0.0; weights.len()];
            let mut db = vec![0.0; class_count];
            for (row, &target) in x.iter().zip(y) {
                let probs = softmax_affine(&weights, &biases, input_width, row);
                for j in 0..class_count {
                    let delta = probs[j] - if j == target { 1.0 } else { 0.0 };
                    db[j] += delta;
                    let out = &mut dw[j * input_width..(j + 1) * input_width];
                    for (g, v) in out.iter_mut().zip(row) {
                        *g += delta * v;
                    }
                }
            }
            for (w, g) in weights.iter_mut().zip(&dw) {
                *w -= learning_rate * g / n;
            }
            for (b, g) in biases.iter_mut().zip(&db) {
                *b -= learning_rate * g / n;
            }
        }
        MetaLearner {
            weights,
            biases,
            input_width,
            class_count,
        }
    }

    pub fn predict_proba_row(&self, row: &[f64]) -> Vec<f64> {
        softmax_affine(&self.weights, &self.biases, self.input_width, row)
    }
}

fn softmax_affine(weights: &[f64], biases: &[f64], width: usize, row: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = biases
        .iter()
        .enumerate()
        .map(|(j, b)| {
            b + weights[j * width..(j + 1) * width]
                .iter()
                .zip(row)
                .map(|(w, v)| w * v)
                .sum::<f64>()
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// A base learner the out-of-fold construction can train repeatedly.
pub trait BaseLearner {
    fn fit(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        class_count: usize,
        seed: u64,
    ) -> Result<Box<dyn BaseModel>, BoxError>;
}

pub trait BaseModel {
    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BoxError>;
}

pub struct ForestLearner(pub ForestConfig);

impl BaseLearner for ForestLearner {
    fn fit(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        class_count: usize,
        seed: u64,
    ) -> Result<Box<dyn BaseModel>, BoxError> {
        let config = ForestConfig { seed, ..self.0.clone() };
        Ok(Box::new(fit_forest(x, y, class_count, &config)?))
    }
}

impl BaseModel for ForestModel {
    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BoxError> {
        Ok(ForestModel::predict_proba(self, x)?)
    }
}

pub struct MlpLearner(pub MlpConfig);

impl BaseLearner for MlpLearner {
    fn fit(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        class_count: usize,
        seed: u64,
    ) -> Result<Box<dyn BaseModel>, BoxError> {
        let config = MlpConfig { seed, ..self.0.clone() };
        Ok(Box::new(fit_mlp(x, y, class_count, &config)?))
    }
}

impl BaseModel for MlpModel {
    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BoxError> {
        Ok(MlpModel::predict_proba(self, x)?)
    }
}

/// n x (learners * C) out-of-fold meta-feature matrix. Each row is filled
/// exactly once, by models trained on folds that exclude it. Per-fold,
/// per-learner seeds derive from (seed, fold, learner).
pub fn oof_meta_features(
    x: &[Vec<f64>],
    y: &[usize],
    class_count: usize,
    learners: &[&dyn BaseLearner],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, StackError> {
    if k < 2 {
        return Err(StackError::BadFoldCount(k));
    }
    let folds = stratified_kfold(y, k)?;
    let width = learners.len() * class_count;
    let mut meta = vec![vec![0.0; width]; x.len()];
    for (f, fold) in folds.iter().enumerate() {
        let in_fold: std::collections::BTreeSet<usize> = fold.iter().copied().collect();
        let train_idx: Vec<usize> = (0..x.len()).filter(|i| !in_fold.contains(i)).collect();
        let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
        let train_y: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
        let held_x: Vec<Vec<f64>> = fold.iter().map(|&i| x[i].clone()).collect();
        for (l, learner) in learners.iter().enumerate() {
            let fold_seed = derive_seed(derive_seed(seed, f as u64), l as u64);
            let model = learner
                .fit(&train_x, &train_y, class_count, fold_seed)
                .map_err(StackError::BaseLearner)?;
            let probas = model.predict_proba(&held_x).map_err(StackError::BaseLearner)?;
            for (&row_idx, proba) in fold.iter().zip(&probas) {
                meta[row_idx][l * class_count..(l + 1) * class_count]
                    .copy_from_slice(proba);
            }
        }
    }
    Ok(meta)
}

/// Everything needed to rebuild the full training pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub extractor_seed: u64,
    pub filter_count: usize,
    pub kernel_size: usize,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
    pub stack: StackConfig,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            extractor_seed: 42,
            filter_count: 64,
            kernel_size: 3,
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
            stack: StackConfig::default(),
        }
    }
}

/// The deployable unit: preprocessing artifacts, both base models, the
/// meta-learner, and the label codec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub extractor: ConvExtractor,
    pub standardizer: Standardizer,
    pub forest: ForestModel,
    pub mlp: MlpModel,
    pub meta: MetaLearner,
    pub codec: LabelCodec,
    pub column_spec: ColumnSpec,
    pub config: HybridConfig,
    pub format_version: u32,
}

impl HybridModel {
    pub fn class_count(&self) -> usize {
        self.codec.class_count()
    }

    pub fn raw_feature_count(&self) -> usize {
        self.standardizer.column_count()
    }

    fn validate_row(&self, row: &[f64]) -> Result<(), StackError> {
        if row.len() != self.raw_feature_count() {
            return Err(StackError::WidthMismatch {
                expected: self.raw_feature_count(),
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(StackError::NonFiniteInput);
        }
        Ok(())
    }

    /// standardize -> conv features for raw rows.
    pub fn conv_features(&self, raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, StackError> {
        for row in raw {
            self.validate_row(row)?;
        }
        let z = self.standardizer.transform(raw)?;
        Ok(self.extractor.extract_features(&z)?)
    }

    /// Meta probabilities from already-extracted conv features.
    pub fn predict_proba_from_conv(
        &self,
        conv: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, StackError> {
        let forest_probas = self
            .forest
            .predict_proba(conv)
            .map_err(StackError::Forest)?;
        let mlp_probas = self.mlp.predict_proba(conv).map_err(StackError::Mlp)?;
        let mut out = Vec::with_capacity(conv.len());
        for i in 0..conv.len() {
            let mut meta_row = Vec::with_capacity(self.meta.input_width);
            meta_row.extend_from_slice(&forest_probas[i]);
            meta_row.extend_from_slice(&mlp_probas[i]);
            if self.config.stack.passthrough {
                meta_row.extend_from_slice(&conv[i]);
            }
            out.push(self.meta.predict_proba_row(&meta_row));
        }
        Ok(out)
    }

    /// Full pipeline on raw feature rows: (class ids, meta probabilities).
    pub fn predict(&self, raw: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<Vec<f64>>), StackError> {
        let conv = self.conv_features(raw)?;
        let probas = self.predict_proba_from_conv(&conv)?;
        let ids = probas.iter().map(|p| argmax_smallest_f64(p)).collect();
        Ok((ids, probas))
    }
}

/// Train the full hybrid pipeline on a cleaned table. Returns the model and
/// the train/test split used, so callers can evaluate on the held-out rows.
pub fn fit_hybrid(
    table: &FlowTable,
    ratio: f64,
    split_seed: u64,
    stratified: bool,
    cfg: &HybridConfig,
) -> Result<(HybridModel, SplitIndices), StackError> {
    if table.class_count() < 2 {
        return Err(StackError::SingleClass);
    }
    let split = if stratified {
        stratified_train_test_split(&table.labels, ratio, split_seed)?
    } else {
        train_test_split(table.row_count(), ratio, split_seed)?
    };
    let train_x: Vec<Vec<f64>> = split
        .train_idx
        .iter()
        .map(|&i| table.features[i].clone())
        .collect();
    let train_y: Vec<usize> = split.train_idx.iter().map(|&i| table.labels[i]).collect();

    let model = fit_hybrid_rows(
        &train_x,
        &train_y,
        table.codec.clone(),
        table.column_spec.clone(),
        cfg,
    )?;
    Ok((model, split))
}

/// Train on explicit raw rows (already selected as the training split).
pub fn fit_hybrid_rows(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    codec: LabelCodec,
    column_spec: ColumnSpec,
    cfg: &HybridConfig,
) -> Result<HybridModel, StackError> {
    let class_count = codec.class_count();
    if class_count < 2 {
        return Err(StackError::SingleClass);
    }
    let standardizer = Standardizer::fit(train_x)?;
    let z = standardizer.transform(train_x)?;
    crate::preprocess::reshape_for_conv(&z, cfg.kernel_size)?;
    let extractor = ConvExtractor::init(cfg.extractor_seed, cfg.filter_count, cfg.kernel_size)?;
    let conv = extractor.extract_features(&z)?;

    let forest_learner = ForestLearner(cfg.forest.clone());
    let mlp_learner = MlpLearner(cfg.mlp.clone());
    let learners: [&dyn BaseLearner; 2] = [&forest_learner, &mlp_learner];
    let mut meta_x = oof_meta_features(
        &conv,
        train_y,
        class_count,
        &learners,
        cfg.stack.meta_folds,
        cfg.stack.seed,
    )?;
    if cfg.stack.passthrough {
        for (row, conv_row) in meta_x.iter_mut().zip(&conv) {
            row.extend_from_slice(conv_row);
        }
    }
    let meta = MetaLearner::fit(
        &meta_x,
        train_y,
        class_count,
        cfg.stack.meta_learning_rate,
        cfg.stack.meta_epochs,
        derive_seed(cfg.stack.seed, u64::MAX),
    );

    // refit both base learners on the full training split
    let forest = fit_forest(&conv, train_y, class_count, &cfg.forest)?;
    let mlp = fit_mlp(&conv, train_y, class_count, &cfg.mlp)?;

    Ok(HybridModel {
        extractor,
        standardizer,
        forest,
        mlp,
        meta,
        codec,
        column_spec,
        config: cfg.clone(),
        format_version: crate::store::FORMAT_VERSION,
    })
}
