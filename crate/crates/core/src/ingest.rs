//! CSV ingestion for flow-record datasets (CIC-DDoS2019 schema or compatible):
//! header-trimmed parsing, row cleaning, feature selection, and multiclass
//! label encoding.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column {0:?} absent from header")]
    LabelColumnAbsent(String),
    #[error("feature column {0:?} absent from header")]
    FeatureColumnAbsent(String),
    #[error("duplicate header name {0:?}")]
    DuplicateHeader(String),
    #[error("invalid column spec: {0}")]
    InvalidSpec(String),
    #[error("no rows survived cleaning")]
    NoSurvivingRows,
    #[error("fewer than 2 distinct classes after cleaning (found {0})")]
    TooFewClasses(usize),
}

/// Which columns are features, which is the label, and which are dropped
/// outright (identifier-like columns carry no generalizable signal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub drop_columns: Vec<String>,
}

/// Default drop set for CIC-DDoS2019-style files.
pub const DEFAULT_DROP_COLUMNS: &[&str] = &[
    "Unnamed: 0",
    "Flow ID",
    "Source IP",
    "Source Port",
    "Destination IP",
    "Destination Port",
    "Timestamp",
    "SimillarHTTP",
];

impl ColumnSpec {
    pub fn new(
        feature_columns: Vec<String>,
        label_column: String,
        drop_columns: Vec<String>,
    ) -> Result<Self, IngestError> {
        if feature_columns.is_empty() {
            return Err(IngestError::InvalidSpec("feature_columns empty".into()));
        }
        if feature_columns.iter().any(|c| *c == label_column) {
            return Err(IngestError::InvalidSpec(format!(
                "label column {label_column:?} listed as feature"
            )));
        }
        let drops: BTreeSet<&String> = drop_columns.iter().collect();
        if let Some(c) = feature_columns.iter().find(|c| drops.contains(c)) {
            return Err(IngestError::InvalidSpec(format!(
                "column {c:?} is both feature and drop"
            )));
        }
        Ok(ColumnSpec {
            feature_columns,
            label_column,
            drop_columns,
        })
    }

    /// Derive a spec from a header: every column that is neither the label
    /// nor in the drop set becomes a feature, in header order.
    pub fn from_header(
        header: &[String],
        label_column: &str,
        drop_columns: &[String],
    ) -> Result<Self, IngestError> {
        let feature_columns: Vec<String> = header
            .iter()
            .filter(|h| *h != label_column && !drop_columns.iter().any(|d| d == *h))
            .cloned()
            .collect();
        ColumnSpec::new(
            feature_columns,
            label_column.to_string(),
            drop_columns.to_vec(),
        )
    }
}

/// Bijective label string <-> contiguous id mapping; class order is
/// lexicographic so the codec is independent of row order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCodec {
    classes: Vec<String>,
}

impl LabelCodec {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = labels.into_iter().collect();
        LabelCodec {
            classes: set.into_iter().map(String::from).collect(),
        }
    }

    pub fn from_classes(classes: Vec<String>) -> Self {
        LabelCodec { classes }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn encode(&self, label: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.classes.get(id).map(String::as_str)
    }
}

/// Cleaned numeric feature matrix plus encoded labels.
#[derive(Debug, Clone)]
pub struct FlowTable {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub codec: LabelCodec,
    pub column_spec: ColumnSpec,
}

impl FlowTable {
    pub fn row_count(&self) -> usize {
        self.features.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_count(&self) -> usize {
        self.codec.class_count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub rows_in: usize,
    pub rows_out: usize,
    pub rows_dropped_missing: usize,
    pub rows_dropped_nonfinite: usize,
    pub columns_dropped: Vec<String>,
}

/// Rows of string cells keyed by trimmed header, prior to numeric parsing.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Read a CSV file, trim ASCII whitespace off headers, and verify that every
/// column the spec names is present exactly once. No numeric parsing yet.
pub fn load_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<RawTable, IngestError> {
    let path = path.as_ref();
    let reader = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_csv_reader(reader, spec)
}

pub fn load_csv_reader(
    reader: impl std::io::Read,
    spec: &ColumnSpec,
) -> Result<RawTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut seen = BTreeSet::new();
    for h in &headers {
        if !seen.insert(h.clone()) {
            return Err(IngestError::DuplicateHeader(h.clone()));
        }
    }
    if !headers.iter().any(|h| *h == spec.label_column) {
        return Err(IngestError::LabelColumnAbsent(spec.label_column.clone()));
    }
    for f in &spec.feature_columns {
        if !headers.iter().any(|h| h == f) {
            return Err(IngestError::FeatureColumnAbsent(f.clone()));
        }
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        rows.push(record.iter().map(|c| c.to_string()).collect());
    }
    Ok(RawTable { headers, rows })
}

enum CellProblem {
    Missing,
    NonFinite,
}

fn parse_feature_cell(cell: &str) -> Result<f64, CellProblem> {
    let trimmed = cell.trim();
    if trimmed.is_empty() {
        return Err(CellProblem::Missing);
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        // "Infinity", "NaN" and unparseable text all land here
        _ => Err(CellProblem::NonFinite),
    }
}

/// Drop the spec's drop columns, discard rows with missing or non-finite
/// feature cells, and encode labels over the surviving rows.
pub fn clean_and_encode(
    raw: &RawTable,
    spec: &ColumnSpec,
) -> Result<(FlowTable, CleanReport), IngestError> {
    let feature_idx: Vec<usize> = spec
        .feature_columns
        .iter()
        .map(|f| {
            raw.column_index(f)
                .ok_or_else(|| IngestError::FeatureColumnAbsent(f.clone()))
        })
        .collect::<Result<_, _>>()?;
    let label_idx = raw
        .column_index(&spec.label_column)
        .ok_or_else(|| IngestError::LabelColumnAbsent(spec.label_column.clone()))?;

    let columns_dropped: Vec<String> = raw
        .headers
        .iter()
        .filter(|h| spec.drop_columns.iter().any(|d| d == *h))
        .cloned()
        .collect();

    let mut report = CleanReport {
        rows_in: raw.rows.len(),
        columns_dropped,
        ..CleanReport::default()
    };

    let mut parsed_rows: Vec<Vec<f64>> = Vec::new();
    let mut label_strings: Vec<String> = Vec::new();
    'rows: for row in &raw.rows {
        let mut values = Vec::with_capacity(feature_idx.len());
        // missing cells take precedence over non-finite ones in the counts
        let mut nonfinite = false;
        for &idx in &feature_idx {
            match row.get(idx).map(String::as_str).map(parse_feature_cell) {
                Some(Ok(v)) => values.push(v),
                Some(Err(CellProblem::Missing)) | None => {
                    report.rows_dropped_missing += 1;
                    continue 'rows;
                }
                Some(Err(CellProblem::NonFinite)) => {
                    nonfinite = true;
                    values.push(f64::NAN);
                }
            }
        }
        if nonfinite {
            report.rows_dropped_nonfinite += 1;
            continue;
        }
        let label = row.get(label_idx).map(|s| s.trim()).unwrap_or("");
        if label.is_empty() {
            report.rows_dropped_missing += 1;
            continue;
        }
        parsed_rows.push(values);
        label_strings.push(label.to_string());
    }

    if parsed_rows.is_empty() {
        return Err(IngestError::NoSurvivingRows);
    }
    let codec = LabelCodec::from_labels(label_strings.iter().map(String::as_str));
    if codec.class_count() < 2 {
        return Err(IngestError::TooFewClasses(codec.class_count()));
    }
    let labels = label_strings
        .iter()
        .map(|s| codec.encode(s).expect("label built from these rows"))
        .collect();
    report.rows_out = parsed_rows.len();

    Ok((
        FlowTable {
            features: parsed_rows,
            labels,
            codec,
            column_spec: spec.clone(),
        },
        report,
    ))
}
