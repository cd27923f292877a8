//! Core algorithms for a multiclass DDoS flow classifier: CSV ingest and
//! label encoding, deterministic splitting and standardization, a frozen
//! seeded 1D convolutional feature extractor, random forest and MLP base
//! classifiers, a stacking meta-learner, evaluation metrics with k-fold
//! cross-validation, a versioned binary model container, and a streaming
//! allow/block gatekeeper.
//!
//! Everything is seeded and single-threaded by design: the same inputs and
//! seeds produce bitwise-identical models, reports, and serialized files.

pub mod conv;
pub mod forest;
pub mod gate;
pub mod ingest;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod stack;
pub mod store;

pub use conv::ConvExtractor;
pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use gate::{serve_stream, Action, FailMode, GatePolicy, VerdictRecord};
pub use ingest::{ColumnSpec, FlowTable, LabelCodec};
pub use metrics::{macro_report, ConfusionMatrix, CvReport, MetricsReport, ModelReportRecord};
pub use mlp::{fit_mlp, MlpConfig, MlpModel};
pub use pipeline::{crossval_all, evaluate_all, PipelineError};
pub use preprocess::{train_test_split, SplitIndices, Standardizer};
pub use rng::{derive_seed, Xorshift64Star};
pub use stack::{fit_hybrid, fit_hybrid_rows, HybridConfig, HybridModel, StackConfig};
pub use store::{load, save, FORMAT_VERSION, MAGIC};
