//! Flat key = value run configuration. Every knob of the pipeline has a
//! namespaced key and a default equal to the owning module's default;
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use ddhm_core::forest::ForestConfig;
use ddhm_core::gate::FailMode;
use ddhm_core::mlp::MlpConfig;
use ddhm_core::stack::{HybridConfig, StackConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub label_column: String,
    /// Explicit feature columns; empty means derive from the header.
    pub feature_columns: Vec<String>,
    pub drop_columns: Vec<String>,

    pub split_ratio: f64,
    pub split_seed: u64,
    pub split_stratified: bool,

    pub extractor_seed: u64,
    pub extractor_filters: usize,
    pub extractor_kernel: usize,

    pub forest_tree_count: usize,
    /// 0 means unbounded.
    pub forest_max_depth: usize,
    pub forest_min_samples_split: usize,
    /// 0 means ceil(sqrt(d)).
    pub forest_features_per_split: usize,
    pub forest_bootstrap: bool,
    pub forest_seed: u64,

    pub mlp_hidden: Vec<usize>,
    pub mlp_learning_rate: f64,
    pub mlp_epochs: usize,
    pub mlp_batch_size: usize,
    pub mlp_seed: u64,
    pub mlp_shuffle: bool,

    pub stack_meta_folds: usize,
    pub stack_seed: u64,
    pub stack_meta_learning_rate: f64,
    pub stack_meta_epochs: usize,
    pub stack_passthrough: bool,

    pub cv_folds: usize,
    pub cv_seed: u64,
    pub cv_stratified: bool,

    pub gate_fail_mode: FailMode,
    pub gate_confidence_floor: f64,
    pub gate_allow_labels: Vec<String>,
    /// Explicit label:action pairs; empty means allow-list over the
    /// model's labels via gate.allow_labels.
    pub gate_actions: Vec<(String, String)>,
    /// 0 means stdin/stdout.
    pub gate_tcp_port: u16,
}

impl Default for RunConfig {
    fn default() -> Self {
        let forest = ForestConfig::default();
        let mlp = MlpConfig::default();
        let stack = StackConfig::default();
        let hybrid = HybridConfig::default();
        RunConfig {
            label_column: "Label".into(),
            feature_columns: vec![],
            drop_columns: ddhm_core::ingest::DEFAULT_DROP_COLUMNS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            split_ratio: 0.8,
            split_seed: 42,
            split_stratified: false,
            extractor_seed: hybrid.extractor_seed,
            extractor_filters: hybrid.filter_count,
            extractor_kernel: hybrid.kernel_size,
            forest_tree_count: forest.tree_count,
            forest_max_depth: forest.max_depth.unwrap_or(0),
            forest_min_samples_split: forest.min_samples_split,
            forest_features_per_split: forest.features_per_split.unwrap_or(0),
            forest_bootstrap: forest.bootstrap,
            forest_seed: forest.seed,
            mlp_hidden: mlp.hidden_sizes,
            mlp_learning_rate: mlp.learning_rate,
            mlp_epochs: mlp.epochs,
            mlp_batch_size: mlp.batch_size,
            mlp_seed: mlp.seed,
            mlp_shuffle: mlp.shuffle,
            stack_meta_folds: stack.meta_folds,
            stack_seed: stack.seed,
            stack_meta_learning_rate: stack.meta_learning_rate,
            stack_meta_epochs: stack.meta_epochs,
            stack_passthrough: stack.passthrough,
            cv_folds: 5,
            cv_seed: 42,
            cv_stratified: true,
            gate_fail_mode: FailMode::Open,
            gate_confidence_floor: 0.0,
            gate_allow_labels: vec!["BENIGN".into()],
            gate_actions: vec![],
            gate_tcp_port: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("config key {key}: bad value {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(CliError::Usage(format!(
            "config key {key}: expected true or false, got {other:?}"
        ))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Apply one key = value pair; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "ingest.label_column" => self.label_column = value.trim().to_string(),
            "ingest.feature_columns" => self.feature_columns = parse_list(value),
            "ingest.drop_columns" => self.drop_columns = parse_list(value),
            "split.ratio" => self.split_ratio = parse(key, value)?,
            "split.seed" => self.split_seed = parse(key, value)?,
            "split.stratified" => self.split_stratified = parse_bool(key, value)?,
            "extractor.seed" => self.extractor_seed = parse(key, value)?,
            "extractor.filters" => self.extractor_filters = parse(key, value)?,
            "extractor.kernel" => self.extractor_kernel = parse(key, value)?,
            "forest.tree_count" => self.forest_tree_count = parse(key, value)?,
            "forest.max_depth" => self.forest_max_depth = parse(key, value)?,
            "forest.min_samples_split" => self.forest_min_samples_split = parse(key, value)?,
            "forest.features_per_split" => self.forest_features_per_split = parse(key, value)?,
            "forest.bootstrap" => self.forest_bootstrap = parse_bool(key, value)?,
            "forest.seed" => self.forest_seed = parse(key, value)?,
            "mlp.hidden" => {
                self.mlp_hidden = parse_list(value)
                    .iter()
                    .map(|v| parse(key, v))
                    .collect::<Result<_, _>>()?
            }
            "mlp.learning_rate" => self.mlp_learning_rate = parse(key, value)?,
            "mlp.epochs" => self.mlp_epochs = parse(key, value)?,
            "mlp.batch_size" => self.mlp_batch_size = parse(key, value)?,
            "mlp.seed" => self.mlp_seed = parse(key, value)?,
            "mlp.shuffle" => self.mlp_shuffle = parse_bool(key, value)?,
            "stack.meta_folds" => self.stack_meta_folds = parse(key, value)?,
            "stack.seed" => self.stack_seed = parse(key, value)?,
            "stack.meta_learning_rate" => self.stack_meta_learning_rate = parse(key, value)?,
            "stack.meta_epochs" => self.stack_meta_epochs = parse(key, value)?,
            "stack.passthrough" => self.stack_passthrough = parse_bool(key, value)?,
            "cv.folds" => self.cv_folds = parse(key, value)?,
            "cv.seed" => self.cv_seed = parse(key, value)?,
            "cv.stratified" => self.cv_stratified = parse_bool(key, value)?,
            "gate.fail_mode" => {
                self.gate_fail_mode = match value.trim() {
                    "open" => FailMode::Open,
                    "closed" => FailMode::Closed,
                    other => {
                        return Err(CliError::Usage(format!(
                            "config key {key}: expected open or closed, got {other:?}"
                        )))
                    }
                }
            }
            "gate.confidence_floor" => self.gate_confidence_floor = parse(key, value)?,
            "gate.allow_labels" => self.gate_allow_labels = parse_list(value),
            "gate.actions" => {
                let mut actions = Vec::new();
                for pair in parse_list(value) {
                    let (label, action) = pair.split_once(':').ok_or_else(|| {
                        CliError::Usage(format!(
                            "config key {key}: expected LABEL:action, got {pair:?}"
                        ))
                    })?;
                    match action {
                        "allow" | "block" | "error" => {}
                        other => {
                            return Err(CliError::Usage(format!(
                                "config key {key}: unknown action {other:?}"
                            )))
                        }
                    }
                    actions.push((label.to_string(), action.to_string()));
                }
                self.gate_actions = actions;
            }
            "gate.tcp_port" => self.gate_tcp_port = parse(key, value)?,
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a config file of `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<(), CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config file {} line {}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Apply `key=value` override pairs from the command line; flags win
    /// over the config file because they are applied afterwards.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), CliError> {
        for pair in pairs {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("--set {pair:?}: expected key=value"))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Effective configuration as sorted `key = value` lines.
    pub fn dump(&self) -> String {
        let entries: BTreeMap<&str, String> = [
            ("ingest.label_column", self.label_column.clone()),
            ("ingest.feature_columns", self.feature_columns.join(",")),
            ("ingest.drop_columns", self.drop_columns.join(",")),
            ("split.ratio", self.split_ratio.to_string()),
            ("split.seed", self.split_seed.to_string()),
            ("split.stratified", self.split_stratified.to_string()),
            ("extractor.seed", self.extractor_seed.to_string()),
            ("extractor.filters", self.extractor_filters.to_string()),
            ("extractor.kernel", self.extractor_kernel.to_string()),
            ("forest.tree_count", self.forest_tree_count.to_string()),
            ("forest.max_depth", self.forest_max_depth.to_string()),
            (
                "forest.min_samples_split",
                self.forest_min_samples_split.to_string(),
            ),
            (
                "forest.features_per_split",
                self.forest_features_per_split.to_string(),
            ),
            ("forest.bootstrap", self.forest_bootstrap.to_string()),
            ("forest.seed", self.forest_seed.to_string()),
            ("mlp.hidden", join_list(&self.mlp_hidden)),
            ("mlp.learning_rate", self.mlp_learning_rate.to_string()),
            ("mlp.epochs", self.mlp_epochs.to_string()),
            ("mlp.batch_size", self.mlp_batch_size.to_string()),
            ("mlp.seed", self.mlp_seed.to_string()),
            ("mlp.shuffle", self.mlp_shuffle.to_string()),
            ("stack.meta_folds", self.stack_meta_folds.to_string()),
            ("stack.seed", self.stack_seed.to_string()),
            (
                "stack.meta_learning_rate",
                self.stack_meta_learning_rate.to_string(),
            ),
            ("stack.meta_epochs", self.stack_meta_epochs.to_string()),
            ("stack.passthrough", self.stack_passthrough.to_string()),
            ("cv.folds", self.cv_folds.to_string()),
            ("cv.seed", self.cv_seed.to_string()),
            ("cv.stratified", self.cv_stratified.to_string()),
            (
                "gate.fail_mode",
                match self.gate_fail_mode {
                    FailMode::Open => "open".into(),
                    FailMode::Closed => "closed".into(),
                },
            ),
            (
                "gate.confidence_floor",
                self.gate_confidence_floor.to_string(),
            ),
            ("gate.allow_labels", self.gate_allow_labels.join(",")),
            (
                "gate.actions",
                self.gate_actions
                    .iter()
                    .map(|(l, a)| format!("{l}:{a}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("gate.tcp_port", self.gate_tcp_port.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k, v))
        .collect();
        entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hybrid_config(&self) -> HybridConfig {
        HybridConfig {
            extractor_seed: self.extractor_seed,
            filter_count: self.extractor_filters,
            kernel_size: self.extractor_kernel,
            forest: ForestConfig {
                tree_count: self.forest_tree_count,
                max_depth: match self.forest_max_depth {
                    0 => None,
                    d => Some(d),
                },
                min_samples_split: self.forest_min_samples_split,
                features_per_split: match self.forest_features_per_split {
                    0 => None,
                    m => Some(m),
                },
                bootstrap: self.forest_bootstrap,
                seed: self.forest_seed,
            },
            mlp: MlpConfig {
                hidden_sizes: self.mlp_hidden.clone(),
                learning_rate: self.mlp_learning_rate,
                epochs: self.mlp_epochs,
                batch_size: self.mlp_batch_size,
                seed: self.mlp_seed,
                shuffle: self.mlp_shuffle,
            },
            stack: StackConfig {
                meta_folds: self.stack_meta_folds,
                seed: self.stack_seed,
                meta_learning_rate: self.stack_meta_learning_rate,
                meta_epochs: self.stack_meta_epochs,
                passthrough: self.stack_passthrough,
            },
        }
    }
}
