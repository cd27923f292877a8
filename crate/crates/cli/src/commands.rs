//! Subcommand implementations. Each returns Ok(()) on success; errors are
//! classified as usage (exit 2) or runtime (exit 3) by the caller. Output
//! files are written atomically: a temp file in the target directory is
//! renamed into place only after a complete write.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ddhm_core::gate::{serve_stream, Action, GatePolicy};
use ddhm_core::ingest::{clean_and_encode, load_csv, CleanReport, ColumnSpec, FlowTable};
use ddhm_core::metrics::{format_comparison_table, macro_report, ConfusionMatrix, MetricsReport, ModelReportRecord};
use ddhm_core::pipeline::{crossval_all, evaluate_all};
use ddhm_core::stack::HybridModel;
use ddhm_core::store::{deserialize_model, load};

use crate::config::RunConfig;
use crate::synth::{generate, SynthSpec};
use crate::CliError;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Write via a temp file in the same directory plus rename, so a failure
/// mid-write never leaves a partial file at the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = PathBuf::from(path);
    let mut name = path
        .file_name()
        .ok_or_else(|| usage(format!("bad output path {}", path.display())))?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    let write = || -> std::io::Result<()> {
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        runtime(format!("writing {}: {e}", path.display()))
    })
}

/// Load and clean a CSV per the run config. An empty feature list in the
/// config means every non-label, non-drop header column is a feature.
pub fn load_table(data: &Path, cfg: &RunConfig) -> Result<(FlowTable, CleanReport), CliError> {
    let spec = if cfg.feature_columns.is_empty() {
        let mut rdr = csv::Reader::from_path(data)
            .map_err(|e| usage(format!("data file {}: {e}", data.display())))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(usage)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        ColumnSpec::from_header(&headers, &cfg.label_column, &cfg.drop_columns).map_err(usage)?
    } else {
        ColumnSpec::new(
            cfg.feature_columns.clone(),
            cfg.label_column.clone(),
            cfg.drop_columns.clone(),
        )
        .map_err(usage)?
    };
    let raw = load_csv(data, &spec).map_err(usage)?;
    clean_and_encode(&raw, &spec).map_err(usage)
}

fn format_report(report: &MetricsReport, classes: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>9} {:>8} {:>8} {:>8}\n",
        "Class", "Precision", "Recall", "F1", "Support"
    ));
    for (label, m) in classes.iter().zip(&report.per_class) {
        out.push_str(&format!(
            "{:<16} {:>9.4} {:>8.4} {:>8.4} {:>8}\n",
            label, m.precision, m.recall, m.f1, m.support
        ));
    }
    out.push_str(&format!(
        "accuracy {:.4}  precision_macro {:.4}  recall_macro {:.4}  f1_macro {:.4}\n",
        report.accuracy, report.precision_macro, report.recall_macro, report.f1_macro
    ));
    out
}

fn print_clean_report(report: &CleanReport) {
    eprintln!(
        "rows in {}, kept {}, dropped {} missing / {} non-finite",
        report.rows_in, report.rows_out, report.rows_dropped_missing, report.rows_dropped_nonfinite
    );
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let (table, clean) = load_table(data, cfg)?;
    print_clean_report(&clean);
    let hybrid_cfg = cfg.hybrid_config();
    let (model, split) = ddhm_core::stack::fit_hybrid(
        &table,
        cfg.split_ratio,
        cfg.split_seed,
        cfg.split_stratified,
        &hybrid_cfg,
    )
    .map_err(runtime)?;

    let test_x: Vec<Vec<f64>> = split.test_idx.iter().map(|&i| table.features[i].clone()).collect();
    let test_y: Vec<usize> = split.test_idx.iter().map(|&i| table.labels[i]).collect();
    let (pred, _) = model.predict(&test_x).map_err(runtime)?;
    let cm = ConfusionMatrix::from_predictions(&test_y, &pred, table.class_count())
        .map_err(runtime)?;
    let report = macro_report(&cm).map_err(runtime)?;
    println!(
        "held-out evaluation ({} rows)\n{}",
        test_y.len(),
        format_report(&report, model.codec.classes())
    );

    let bytes = ddhm_core::store::serialize_model(&model);
    atomic_write(out, &bytes)?;
    println!("model written to {}", out.display());
    Ok(())
}

fn write_report_lines<T: Serialize>(rows: &[T], json_out: Option<&Path>) -> Result<(), CliError> {
    let mut ndjson = String::new();
    for row in rows {
        ndjson.push_str(&serde_json::to_string(row).map_err(runtime)?);
        ndjson.push('\n');
    }
    print!("{ndjson}");
    if let Some(path) = json_out {
        atomic_write(path, ndjson.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, data: &Path, json_out: Option<&Path>) -> Result<(), CliError> {
    let (table, clean) = load_table(data, cfg)?;
    print_clean_report(&clean);
    let (rows, _, _) = evaluate_all(
        &table,
        cfg.split_ratio,
        cfg.split_seed,
        cfg.split_stratified,
        &cfg.hybrid_config(),
    )
    .map_err(runtime)?;
    let records: Vec<ModelReportRecord> = rows
        .iter()
        .map(|(name, report)| ModelReportRecord::new(name, report, None))
        .collect();
    println!("{}", format_comparison_table(&records));
    write_report_lines(&records, json_out)
}

/// Per-model cross-validation summary line. Field names are part of the
/// output contract.
#[derive(Debug, Serialize)]
struct CvRecord {
    model: String,
    mean: f64,
    std_dev: f64,
    k: usize,
    fold_accuracies: Vec<f64>,
}

pub fn cmd_crossval(cfg: &RunConfig, data: &Path, json_out: Option<&Path>) -> Result<(), CliError> {
    let (table, clean) = load_table(data, cfg)?;
    print_clean_report(&clean);
    let rows = crossval_all(
        &table,
        cfg.cv_folds,
        cfg.cv_seed,
        cfg.cv_stratified,
        &cfg.hybrid_config(),
    )
    .map_err(runtime)?;
    let records: Vec<CvRecord> = rows
        .into_iter()
        .map(|(model, cv)| CvRecord {
            model,
            mean: cv.mean,
            std_dev: cv.std_dev,
            k: cv.k,
            fold_accuracies: cv.fold_accuracies,
        })
        .collect();
    for r in &records {
        let folds: Vec<String> = r.fold_accuracies.iter().map(|a| format!("{a:.4}")).collect();
        println!(
            "{:<10} mean {:.4}  std {:.4}  folds [{}]",
            r.model,
            r.mean,
            r.std_dev,
            folds.join(", ")
        );
    }
    write_report_lines(&records, json_out)
}

fn load_model(path: &Path) -> Result<HybridModel, CliError> {
    load(path).map_err(|e| usage(format!("model file {}: {e}", path.display())))
}

/// Classification line for one input row: no policy, no verdict.
#[derive(Debug, Serialize)]
struct PredictRecord {
    id: String,
    class: String,
    confidence: f64,
}

pub fn cmd_predict(model_path: &Path, data: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(data)
        .map_err(|e| usage(format!("data file {}: {e}", data.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(usage)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let feature_idx: Vec<usize> = model
        .column_spec
        .feature_columns
        .iter()
        .map(|f| {
            headers
                .iter()
                .position(|h| h == f)
                .ok_or_else(|| usage(format!("data file {}: missing column {f:?}", data.display())))
        })
        .collect::<Result<_, _>>()?;

    let mut lines = String::new();
    let mut skipped = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(usage)?;
        let row: Option<Vec<f64>> = feature_idx
            .iter()
            .map(|&j| {
                record
                    .get(j)
                    .and_then(|c| c.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        let Some(row) = row else {
            skipped += 1;
            continue;
        };
        let (pred, probs) = model.predict(&[row]).map_err(runtime)?;
        let class = model
            .codec
            .decode(pred[0])
            .ok_or_else(|| runtime("prediction outside label codec"))?
            .to_string();
        let confidence = probs[0][pred[0]];
        let record = PredictRecord {
            id: i.to_string(),
            class,
            confidence,
        };
        lines.push_str(&serde_json::to_string(&record).map_err(runtime)?);
        lines.push('\n');
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} rows with missing or non-numeric features");
    }
    match out {
        Some(path) => atomic_write(path, lines.as_bytes())?,
        None => print!("{lines}"),
    }
    Ok(())
}

fn build_policy(cfg: &RunConfig, labels: &[String]) -> Result<GatePolicy, CliError> {
    let mut policy = GatePolicy::default_for(labels, &cfg.gate_allow_labels);
    policy.fail_mode = cfg.gate_fail_mode;
    policy.confidence_floor = cfg.gate_confidence_floor;
    if !cfg.gate_actions.is_empty() {
        let mut actions = BTreeMap::new();
        for (label, action) in &cfg.gate_actions {
            let action = match action.as_str() {
                "allow" => Action::Allow,
                "block" => Action::Block,
                "error" => Action::Error,
                other => return Err(usage(format!("unknown action {other:?}"))),
            };
            actions.insert(label.clone(), action);
        }
        policy.actions = actions;
    }
    policy.validate_against(labels).map_err(usage)?;
    Ok(policy)
}

pub fn cmd_serve(cfg: &RunConfig, model_path: &Path) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let labels = model.codec.classes().to_vec();
    let policy = build_policy(cfg, &labels)?;

    if cfg.gate_tcp_port != 0 {
        let listener = TcpListener::bind(("127.0.0.1", cfg.gate_tcp_port))
            .map_err(|e| runtime(format!("bind port {}: {e}", cfg.gate_tcp_port)))?;
        eprintln!("listening on 127.0.0.1:{}", cfg.gate_tcp_port);
        for stream in listener.incoming() {
            let stream = stream.map_err(runtime)?;
            let reader = std::io::BufReader::new(stream.try_clone().map_err(runtime)?);
            let summary = serve_stream(reader, stream, &model, &policy).map_err(runtime)?;
            eprintln!("{}", serde_json::to_string(&summary).map_err(runtime)?);
        }
        return Ok(());
    }

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let summary = serve_stream(stdin.lock(), stdout.lock(), &model, &policy).map_err(runtime)?;
    eprintln!("{}", serde_json::to_string(&summary).map_err(runtime)?);
    Ok(())
}

pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<(), CliError> {
    let csv = generate(spec)?;
    atomic_write(out, csv.as_bytes())
}

pub fn cmd_dump_config(cfg: &RunConfig) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    stdout
        .lock()
        .write_all(cfg.dump().as_bytes())
        .map_err(runtime)
}

// keep deserialize_model referenced so the store's two entry points stay
// exercised from the binary crate as well
#[allow(dead_code)]
fn _load_bytes(bytes: &[u8]) -> Result<HybridModel, CliError> {
    deserialize_model(bytes).map_err(usage)
}
