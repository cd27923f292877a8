//! End-to-end training and evaluation paths shared by the CLI and the
//! acceptance suite: split -> standardize -> extract -> fit -> report, for
//! the forest-only, MLP-only, and hybrid models, plus leakage-free k-fold
//! cross-validation over the full per-fold pipeline.

use thiserror::Error;

use crate::conv::{ConvError, ConvExtractor};
use crate::forest::{fit_forest, ForestConfig, ForestError};
use crate::ingest::FlowTable;
use crate::metrics::{
    kfold_cross_validate, macro_report, BoxError, ConfusionMatrix, CvReport, MetricsError,
    MetricsReport,
};
use crate::mlp::{fit_mlp, MlpConfig, MlpError};
use crate::preprocess::{PreprocessError, SplitIndices, Standardizer};
use crate::rng::derive_seed;
use crate::stack::{fit_hybrid, fit_hybrid_rows, HybridConfig, HybridModel, StackError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub const MODEL_NAMES: [&str; 3] = ["rf", "mlp", "hybrid"];

/// Held-out-split evaluation of all three models under one config.
/// Returns (model name, report) rows in rf / mlp / hybrid order, plus the
/// trained hybrid model and the split that produced the numbers.
pub fn evaluate_all(
    table: &FlowTable,
    ratio: f64,
    split_seed: u64,
    stratified: bool,
    cfg: &HybridConfig,
) -> Result<(Vec<(String, MetricsReport)>, HybridModel, SplitIndices), PipelineError> {
    let (hybrid, split) = fit_hybrid(table, ratio, split_seed, stratified, cfg)?;
    let rows =
        |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| table.features[i].clone()).collect() };
    let train_x = rows(&split.train_idx);
    let train_y: Vec<usize> = split.train_idx.iter().map(|&i| table.labels[i]).collect();
    let test_x = rows(&split.test_idx);
    let test_y: Vec<usize> = split.test_idx.iter().map(|&i| table.labels[i]).collect();
    let class_count = table.class_count();

    let standardizer = Standardizer::fit(&train_x)?;
    let extractor = ConvExtractor::init(cfg.extractor_seed, cfg.filter_count, cfg.kernel_size)?;
    let conv_train = extractor.extract_features(&standardizer.transform(&train_x)?)?;
    let conv_test = extractor.extract_features(&standardizer.transform(&test_x)?)?;

    let forest = fit_forest(&conv_train, &train_y, class_count, &cfg.forest)?;
    let mlp = fit_mlp(&conv_train, &train_y, class_count, &cfg.mlp)?;

    let report_of = |pred: &[usize]| -> Result<MetricsReport, PipelineError> {
        Ok(macro_report(&ConfusionMatrix::from_predictions(
            &test_y, pred, class_count,
        )?)?)
    };
    let rf_report = report_of(&forest.predict(&conv_test)?)?;
    let mlp_report = report_of(&mlp.predict(&conv_test)?)?;
    let (hybrid_pred, _) = hybrid.predict(&test_x)?;
    let hybrid_report = report_of(&hybrid_pred)?;

    Ok((
        vec![
            ("rf".to_string(), rf_report),
            ("mlp".to_string(), mlp_report),
            ("hybrid".to_string(), hybrid_report),
        ],
        hybrid,
        split,
    ))
}

fn fit_features(
    train_x: &[Vec<f64>],
    cfg: &HybridConfig,
) -> Result<(Standardizer, ConvExtractor, Vec<Vec<f64>>), PipelineError> {
    let standardizer = Standardizer::fit(train_x)?;
    let extractor = ConvExtractor::init(cfg.extractor_seed, cfg.filter_count, cfg.kernel_size)?;
    let conv = extractor.extract_features(&standardizer.transform(train_x)?)?;
    Ok((standardizer, extractor, conv))
}

struct RfFoldTrainer<'a>(&'a HybridConfig);

impl crate::metrics::FoldTrainer for RfFoldTrainer<'_> {
    fn fit_predict(
        &self,
        train_x: &[Vec<f64>],
        train_y: &[usize],
        class_count: usize,
        seed: u64,
        test_x: &[Vec<f64>],
    ) -> Result<Vec<usize>, BoxError> {
        let (standardizer, extractor, conv_train) = fit_features(train_x, self.0)?;
        let config = ForestConfig {
            seed,
            ..self.0.forest.clone()
        };
        let forest = fit_forest(&conv_train, train_y, class_count, &config)?;
        let conv_test = extractor.extract_features(&standardizer.transform(test_x)?)?;
        Ok(forest.predict(&conv_test)?)
    }
}

struct MlpFoldTrainer<'a>(&'a HybridConfig);

impl crate::metrics::FoldTrainer for MlpFoldTrainer<'_> {
    fn fit_predict(
        &self,
        train_x: &[Vec<f64>],
        train_y: &[usize],
        class_count: usize,
        seed: u64,
        test_x: &[Vec<f64>],
    ) -> Result<Vec<usize>, BoxError> {
        let (standardizer, extractor, conv_train) = fit_features(train_x, self.0)?;
        let config = MlpConfig {
            seed,
            ..self.0.mlp.clone()
        };
        let mlp = fit_mlp(&conv_train, train_y, class_count, &config)?;
        let conv_test = extractor.extract_features(&standardizer.transform(test_x)?)?;
        Ok(mlp.predict(&conv_test)?)
    }
}

struct HybridFoldTrainer<'a> {
    cfg: &'a HybridConfig,
    table: &'a FlowTable,
}

impl crate::metrics::FoldTrainer for HybridFoldTrainer<'_> {
    fn fit_predict(
        &self,
        train_x: &[Vec<f64>],
        train_y: &[usize],
        _class_count: usize,
        seed: u64,
        test_x: &[Vec<f64>],
    ) -> Result<Vec<usize>, BoxError> {
        let mut cfg = self.cfg.clone();
        cfg.forest.seed = derive_seed(seed, 1);
        cfg.mlp.seed = derive_seed(seed, 2);
        cfg.stack.seed = derive_seed(seed, 3);
        let model = fit_hybrid_rows(
            train_x,
            train_y,
            self.table.codec.clone(),
            self.table.column_spec.clone(),
            &cfg,
        )?;
        let (pred, _) = model.predict(test_x)?;
        Ok(pred)
    }
}

/// k-fold cross-validation for all three models; the standardizer and
/// extractor are refit inside each fold.
pub fn crossval_all(
    table: &FlowTable,
    k: usize,
    seed: u64,
    stratified: bool,
    cfg: &HybridConfig,
) -> Result<Vec<(String, CvReport)>, PipelineError> {
    let class_count = table.class_count();
    let rf = kfold_cross_validate(
        &table.features,
        &table.labels,
        class_count,
        &RfFoldTrainer(cfg),
        k,
        seed,
        stratified,
    )?;
    let mlp = kfold_cross_validate(
        &table.features,
        &table.labels,
        class_count,
        &MlpFoldTrainer(cfg),
        k,
        seed,
        stratified,
    )?;
    let hybrid = kfold_cross_validate(
        &table.features,
        &table.labels,
        class_count,
        &HybridFoldTrainer { cfg, table },
        k,
        seed,
        stratified,
    )?;
    Ok(vec![
        ("rf".to_string(), rf),
        ("mlp".to_string(), mlp),
        ("hybrid".to_string(), hybrid),
    ])
}
