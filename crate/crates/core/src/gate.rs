//! Streaming detect-and-mitigate gatekeeper: read one flow record per line,
//! classify it with the hybrid model, and emit an allow/block verdict.
//!
//! Wire format, NDJSON both ways:
//!   in:  {"id": "...", "features": {"<column>": <number>, ...}}
//!   out: {"id", "class", "confidence", "action", "reason", "us",
//!         "model_version"}
//! Malformed input never terminates the stream; every input line yields
//! exactly one verdict line, in input order.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stack::{HybridModel, StackError};

#[derive(Debug, Error)]
pub enum GateError {
    #[error("policy has no action for model class {0:?}")]
    UnmappedLabel(String),
    #[error("stream transport failure: {0}")]
    Transport(#[from] std::io::Error),
    #[error("classification failed: {0}")]
    Classify(#[from] StackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Allow,
    Block,
    Error,
}

/// What to do with records that cannot be classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailMode {
    /// Malformed records pass (fail-open).
    Open,
    /// Malformed records are blocked (fail-closed).
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub actions: BTreeMap<String, Action>,
    /// Action for class labels missing from the map after startup
    /// validation (can only happen with hand-edited policies).
    pub default_action: Action,
    pub fail_mode: FailMode,
    /// Below this confidence the default action applies. 0 disables.
    pub confidence_floor: f64,
}

impl GatePolicy {
    /// Default policy over a model's labels: allow-listed labels pass,
    /// everything else is blocked.
    pub fn default_for(labels: &[String], allow_labels: &[String]) -> Self {
        let actions = labels
            .iter()
            .map(|l| {
                let action = if allow_labels.iter().any(|a| a == l) {
                    Action::Allow
                } else {
                    Action::Block
                };
                (l.clone(), action)
            })
            .collect();
        GatePolicy {
            actions,
            default_action: Action::Allow,
            fail_mode: FailMode::Open,
            confidence_floor: 0.0,
        }
    }

    pub fn fail_action(&self) -> Action {
        match self.fail_mode {
            FailMode::Open => Action::Allow,
            FailMode::Closed => Action::Block,
        }
    }

    /// Startup validation: every model class label must be resolvable.
    pub fn validate_against(&self, labels: &[String]) -> Result<(), GateError> {
        for label in labels {
            if !self.actions.contains_key(label) {
                return Err(GateError::UnmappedLabel(label.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub id: String,
    pub class: String,
    pub confidence: f64,
    pub action: Action,
    pub reason: String,
    pub us: u64,
    pub model_version: u32,
}

/// Parse a record's feature map into the model's raw feature order.
/// Returns a malformed-record reason instead of erroring out.
pub fn preprocess_live(
    fields: &BTreeMap<String, serde_json::Value>,
    model: &HybridModel,
) -> Result<Vec<f64>, String> {
    let mut row = Vec::with_capacity(model.column_spec.feature_columns.len());
    for column in &model.column_spec.feature_columns {
        let value = fields
            .get(column)
            .ok_or_else(|| format!("missing column {column:?}"))?;
        let v = match value {
            serde_json::Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
            serde_json::Value::String(s) => s.trim().parse::<f64>().unwrap_or(f64::NAN),
            _ => f64::NAN,
        };
        if !v.is_finite() {
            return Err(format!("non-finite value in column {column:?}"));
        }
        row.push(v);
    }
    Ok(row)
}

/// One-row classification: decoded label and meta max-probability.
pub fn classify_flow(model: &HybridModel, row: &[f64]) -> Result<(String, f64), GateError> {
    let (ids, probas) = model.predict(&[row.to_vec()])?;
    let label = model
        .codec
        .decode(ids[0])
        .unwrap_or_default()
        .to_string();
    let confidence = probas[0]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((label, confidence))
}

/// Total decision function: policy table lookup with malformed and
/// low-confidence handling.
pub fn decide(
    policy: &GatePolicy,
    label: &str,
    confidence: f64,
    malformed: Option<&str>,
) -> (Action, String) {
    if let Some(reason) = malformed {
        return (policy.fail_action(), format!("malformed: {reason}"));
    }
    if confidence < policy.confidence_floor {
        return (policy.default_action, "low-confidence".to_string());
    }
    match policy.actions.get(label) {
        Some(action) => (*action, label.to_string()),
        None => (policy.default_action, label.to_string()),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub records: u64,
    pub allows: u64,
    pub blocks: u64,
    pub errors: u64,
    pub elapsed_secs: f64,
    pub records_per_sec: f64,
}

#[derive(Debug, Deserialize)]
struct InputRecord {
    #[serde(default)]
    id: String,
    #[serde(default)]
    features: BTreeMap<String, serde_json::Value>,
}

fn process_line(line: &[u8], model: &HybridModel, policy: &GatePolicy) -> VerdictRecord {
    let started = Instant::now();
    let mut id = String::new();
    let outcome: Result<(String, f64), String> = (|| {
        let text =
            std::str::from_utf8(line).map_err(|_| "line is not valid UTF-8".to_string())?;
        let record: InputRecord =
            serde_json::from_str(text).map_err(|e| format!("bad JSON: {e}"))?;
        id = record.id;
        let row = preprocess_live(&record.features, model)?;
        classify_flow(model, &row).map_err(|e| format!("classification failed: {e}"))
    })();
    let (class, confidence, action, reason) = match outcome {
        Ok((label, confidence)) => {
            let (action, reason) = decide(policy, &label, confidence, None);
            (label, confidence, action, reason)
        }
        Err(why) => {
            let (action, reason) = decide(policy, "", 0.0, Some(&why));
            (String::new(), 0.0, action, reason)
        }
    };
    VerdictRecord {
        id,
        class,
        confidence,
        action,
        reason,
        us: started.elapsed().as_micros() as u64,
        model_version: model.format_version,
    }
}

/// Serve newline-delimited records until EOF, one verdict line per input
/// line, in input order. Malformed records are counted as errors but never
/// terminate the stream.
pub fn serve_stream(
    input: impl BufRead,
    mut output: impl Write,
    model: &HybridModel,
    policy: &GatePolicy,
) -> Result<RunSummary, GateError> {
    policy.validate_against(&model.codec.classes().to_vec())?;
    let started = Instant::now();
    let mut summary = RunSummary::default();
    let mut input = input;
    let mut line = Vec::new();
    loop {
        line.clear();
        let read = input.read_until(b'\n', &mut line)?;
        if read == 0 {
            break;
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        let verdict = process_line(&line, model, policy);
        summary.records += 1;
        if verdict.reason.starts_with("malformed:") {
            summary.errors += 1;
        } else {
            match verdict.action {
                Action::Allow => summary.allows += 1,
                Action::Block => summary.blocks += 1,
                Action::Error => summary.errors += 1,
            }
        }
        serde_json::to_writer(&mut output, &verdict).map_err(std::io::Error::from)?;
        output.write_all(b"\n")?;
    }
    summary.elapsed_secs = started.elapsed().as_secs_f64();
    summary.records_per_sec = if summary.elapsed_secs > 0.0 {
        summary.records as f64 / summary.elapsed_secs
    } else {
        0.0
    };
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestConfig;
    use crate::ingest::{ColumnSpec, FlowTable, LabelCodec};
    use crate::mlp::MlpConfig;
    use crate::rng::Xorshift64Star;
    use crate::stack::{fit_hybrid, HybridConfig, StackConfig};

    fn trained() -> (HybridModel, FlowTable) {
        let mut rng = Xorshift64Star::new(41);
        let (n, d) = (180, 6);
        let classes = ["BENIGN", "Syn", "UDP"];
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..d).map(|_| rng.uniform(-5.0, 5.0)).collect())
            .collect();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = i % 3;
            features.push(
                centers[class]
                    .iter()
                    .map(|&m| m + 0.5 * rng.next_gaussian())
                    .collect(),
            );
            labels.push(class);
        }
        let table = FlowTable {
            features,
            labels,
            codec: LabelCodec::from_classes(classes.iter().map(|s| s.to_string()).collect()),
            column_spec: ColumnSpec::new(
                (0..d).map(|i| format!("f{i:02}")).collect(),
                "Label".into(),
                vec![],
            )
            .unwrap(),
        };
        let cfg = HybridConfig {
            filter_count: 6,
            forest: ForestConfig {
                tree_count: 10,
                ..ForestConfig::default()
            },
            mlp: MlpConfig {
                hidden_sizes: vec![12],
                epochs: 20,
                learning_rate: 0.01,
                batch_size: 32,
                ..MlpConfig::default()
            },
            stack: StackConfig {
                meta_folds: 3,
                meta_epochs: 100,
                ..StackConfig::default()
            },
            ..HybridConfig::default()
        };
        let (model, _) = fit_hybrid(&table, 0.8, 42, false, &cfg).unwrap();
        (model, table)
    }

    fn policy_for(model: &HybridModel) -> GatePolicy {
        GatePolicy::default_for(&model.codec.classes().to_vec(), &["BENIGN".to_string()])
    }

    fn record_json(model: &HybridModel, id: &str, row: &[f64]) -> String {
        let features: BTreeMap<&str, f64> = model
            .column_spec
            .feature_columns
            .iter()
            .map(String::as_str)
            .zip(row.iter().copied())
            .collect();
        serde_json::to_string(&serde_json::json!({"id": id, "features": features})).unwrap()
    }

    #[test]
    fn preprocess_live_matches_offline_pipeline() {
        let (model, table) = trained();
        let row = &table.features[0];
        let fields: BTreeMap<String, serde_json::Value> = model
            .column_spec
            .feature_columns
            .iter()
            .cloned()
            .zip(row.iter().map(|&v| serde_json::json!(v)))
            .collect();
        let parsed = preprocess_live(&fields, &model).unwrap();
        assert_eq!(&parsed, row);
    }

    #[test]
    fn preprocess_live_malformed_signals() {
        let (model, table) = trained();
        let row = &table.features[0];
        let mut fields: BTreeMap<String, serde_json::Value> = model
            .column_spec
            .feature_columns
            .iter()
            .cloned()
            .zip(row.iter().map(|&v| serde_json::json!(v)))
            .collect();
        fields.remove("f00");
        assert!(preprocess_live(&fields, &model).unwrap_err().contains("missing column"));

        fields.insert("f00".into(), serde_json::json!("Infinity"));
        assert!(preprocess_live(&fields, &model)
            .unwrap_err()
            .contains("non-finite"));
    }

    #[test]
    fn classify_flow_deterministic_and_bounded() {
        let (model, table) = trained();
        let c = model.class_count() as f64;
        for row in table.features.iter().take(20) {
            let (label_a, conf_a) = classify_flow(&model, row).unwrap();
            let (label_b, conf_b) = classify_flow(&model, row).unwrap();
            assert_eq!(label_a, label_b);
            assert_eq!(conf_a, conf_b);
            assert!(conf_a >= 1.0 / c - 1e-12 && conf_a <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn benign_typical_row_classified_benign() {
        let (model, table) = trained();
        // class 0 is BENIGN in the fixture; row 0 belongs to it
        let (label, conf) = classify_flow(&model, &table.features[0]).unwrap();
        assert_eq!(label, "BENIGN");
        assert!(conf > 0.5);
    }

    #[test]
    fn decide_policy_table() {
        let (model, _) = trained();
        let policy = policy_for(&model);
        assert_eq!(
            decide(&policy, "BENIGN", 0.9, None),
            (Action::Allow, "BENIGN".to_string())
        );
        assert_eq!(
            decide(&policy, "Syn", 0.95, None),
            (Action::Block, "Syn".to_string())
        );
        let (action, reason) = decide(&policy, "", 0.0, Some("bad JSON"));
        assert_eq!(action, Action::Allow); // fail-open
        assert_eq!(reason, "malformed: bad JSON");

        let closed = GatePolicy {
            fail_mode: FailMode::Closed,
            ..policy.clone()
        };
        assert_eq!(decide(&closed, "", 0.0, Some("x")).0, Action::Block);

        let floored = GatePolicy {
            confidence_floor: 0.99,
            default_action: Action::Block,
            ..policy
        };
        assert_eq!(
            decide(&floored, "BENIGN", 0.5, None),
            (Action::Block, "low-confidence".to_string())
        );
    }

    #[test]
    fn serve_stream_order_and_counts() {
        let (model, table) = trained();
        let policy = policy_for(&model);
        let input: String = (0..3)
            .map(|i| record_json(&model, &format!("r{i}"), &table.features[i]) + "\n")
            .collect();
        let mut out = Vec::new();
        let summary = serve_stream(input.as_bytes(), &mut out, &model, &policy).unwrap();
        assert_eq!(summary.records, 3);
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 3);
        for (i, line) in lines.iter().enumerate() {
            let v: VerdictRecord = serde_json::from_str(line).unwrap();
            assert_eq!(v.id, format!("r{i}"));
            assert_eq!(v.model_version, model.format_version);
        }
    }

    #[test]
    fn serve_stream_empty_input() {
        let (model, _) = trained();
        let policy = policy_for(&model);
        let mut out = Vec::new();
        let summary = serve_stream(&b""[..], &mut out, &model, &policy).unwrap();
        assert_eq!(summary.records, 0);
        assert!(out.is_empty());
    }

    #[test]
    fn verdict_json_has_exact_keys() {
        let (model, table) = trained();
        let policy = policy_for(&model);
        let input = record_json(&model, "x", &table.features[0]) + "\n";
        let mut out = Vec::new();
        serve_stream(input.as_bytes(), &mut out, &model, &policy).unwrap();
        // key order matters on the wire, so inspect the raw text: a parsed
        // Value re-sorts object keys
        let text = String::from_utf8(out).unwrap();
        let expected = ["id", "class", "confidence", "action", "reason", "us", "model_version"];
        let positions: Vec<usize> = expected
            .iter()
            .map(|k| text.find(&format!("\"{k}\":")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v.as_object().unwrap().len(), expected.len());
    }

    #[test]
    fn online_offline_equivalence() {
        let (model, table) = trained();
        let policy = policy_for(&model);
        let rows: Vec<&Vec<f64>> = table.features.iter().take(50).collect();
        let input: String = rows
            .iter()
            .enumerate()
            .map(|(i, r)| record_json(&model, &i.to_string(), r) + "\n")
            .collect();
        let mut out = Vec::new();
        serve_stream(input.as_bytes(), &mut out, &model, &policy).unwrap();
        for (line, row) in std::str::from_utf8(&out).unwrap().lines().zip(&rows) {
            let v: VerdictRecord = serde_json::from_str(line).unwrap();
            let (label, conf) = classify_flow(&model, row).unwrap();
            let (action, reason) = decide(&policy, &label, conf, None);
            assert_eq!(v.class, label);
            assert_eq!(v.confidence, conf);
            assert_eq!(v.action, action);
            assert_eq!(v.reason, reason);
        }
    }

    #[test]
    fn fuzz_random_bytes_one_verdict_per_line() {
        let (model, _) = trained();
        let policy = policy_for(&model);
        let mut rng = Xorshift64Star::new(1234);
        let mut input = Vec::new();
        let lines = 500;
        for _ in 0..lines {
            let len = rng.next_below(60);
            for _ in 0..len {
                let mut b = (rng.next_u64() & 0xFF) as u8;
                if b == b'\n' {
                    b = b'x';
                }
                input.push(b);
            }
            input.push(b'\n');
        }
        let mut out = Vec::new();
        let summary = serve_stream(&input[..], &mut out, &model, &policy).unwrap();
        assert_eq!(summary.records, lines);
        assert_eq!(out.iter().filter(|&&b| b == b'\n').count(), lines as usize);
    }

    #[test]
    fn startup_validation_rejects_unmapped_labels() {
        let (model, _) = trained();
        let mut policy = policy_for(&model);
        policy.actions.remove("Syn");
        let mut out = Vec::new();
        let err = serve_stream(&b""[..], &mut out, &model, &policy).unwrap_err();
        assert!(matches!(err, GateError::UnmappedLabel(l) if l == "Syn"));
    }
}
