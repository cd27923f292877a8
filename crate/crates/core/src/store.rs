//! Single-file binary container for the hybrid model.
//!
//! Layout, all integers little-endian:
//!   magic "DDHM" (4 bytes)
//!   format version (u32)
//!   metadata length (u32)
//!   metadata (UTF-8 JSON: labels, column spec, config echo, layer shapes,
//!     section directory with byte offsets/lengths relative to the payload)
//!   payload: IEEE-754 binary64 arrays, concatenated in directory order
//!   CRC-32 (IEEE) of every preceding byte (u32)
//!
//! Identical models produce identical bytes; no compression.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::ConvExtractor;
use crate::forest::{ForestModel, Tree, TreeNode};
use crate::ingest::{ColumnSpec, LabelCodec};
use crate::mlp::{Activation, LayerParams, MlpModel, TrainLog};
use crate::preprocess::Standardizer;
use crate::stack::{HybridConfig, HybridModel, MetaLearner};

pub const MAGIC: [u8; 4] = *b"DDHM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a DDHM container)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("file truncated or section out of bounds: {0}")]
    Truncated(String),
    #[error("invalid metadata: {0}")]
    BadMetadata(String),
}

/// Reflected CRC-32 (IEEE 802.3), polynomial 0xEDB88320.
pub fn crc32(bytes: &[u8]) -> u32 {
    const fn build_table() -> [u32; 256] {
        let mut table = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            table[i] = c;
            i += 1;
        }
        table
    }
    const TABLE: [u32; 256] = build_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionEntry {
    name: String,
    /// Byte offset relative to the start of the payload area.
    offset: u64,
    /// Length in bytes (a multiple of 8).
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerShape {
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    classes: Vec<String>,
    column_spec: ColumnSpec,
    config: HybridConfig,
    standardizer_fitted_on: usize,
    extractor_seed: u64,
    filter_count: usize,
    kernel_size: usize,
    mlp_layers: Vec<LayerShape>,
    tree_count: usize,
    meta_input_width: usize,
    sections: Vec<SectionEntry>,
}

fn f64s_to_bytes(values: &[f64], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

/// Per-tree flat encoding: node records of width 5 + C:
/// internal: [0, feature, threshold, left, right, 0 x C]
/// leaf:     [1, class, 0, 0, 0, counts x C]
fn encode_tree(tree: &Tree, class_count: usize) -> Vec<f64> {
    let width = 5 + class_count;
    let mut out = Vec::with_capacity(tree.nodes.len() * width);
    for node in &tree.nodes {
        match node {
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                out.push(0.0);
                out.push(*feature as f64);
                out.push(*threshold);
                out.push(*left as f64);
                out.push(*right as f64);
                out.extend(std::iter::repeat(0.0).take(class_count));
            }
            TreeNode::Leaf { class, counts } => {
                out.push(1.0);
                out.push(*class as f64);
                out.push(0.0);
                out.push(0.0);
                out.push(0.0);
                out.extend(counts.iter().map(|&c| c as f64));
            }
        }
    }
    out
}

fn decode_tree(values: &[f64], class_count: usize) -> Result<Tree, StoreError> {
    let width = 5 + class_count;
    if values.len() % width != 0 {
        return Err(StoreError::BadMetadata(format!(
            "tree section length {} not a multiple of node width {width}",
            values.len()
        )));
    }
    let node_count = values.len() / width;
    let mut nodes = Vec::with_capacity(node_count);
    for rec in values.chunks_exact(width) {
        let node = if rec[0] == 0.0 {
            let left = rec[3] as usize;
            let right = rec[4] as usize;
            if left >= node_count || right >= node_count {
                return Err(StoreError::BadMetadata("tree child index out of bounds".into()));
            }
            TreeNode::Internal {
                feature: rec[1] as usize,
                threshold: rec[2],
                left,
                right,
            }
        } else {
            TreeNode::Leaf {
                class: rec[1] as usize,
                counts: rec[5..].iter().map(|&v| v as usize).collect(),
            }
        };
        nodes.push(node);
    }
    Ok(Tree { nodes })
}

pub fn serialize_model(model: &HybridModel) -> Vec<u8> {
    let class_count = model.class_count();
    let mut sections: Vec<(String, Vec<f64>)> = vec![
        ("standardizer.means".into(), model.standardizer.means.clone()),
        ("standardizer.stds".into(), model.standardizer.stds.clone()),
        (
            "extractor.weights".into(),
            model.extractor.weights().iter().flatten().copied().collect(),
        ),
        ("extractor.biases".into(), model.extractor.biases().to_vec()),
        ("meta.weights".into(), model.meta.weights.clone()),
        ("meta.biases".into(), model.meta.biases.clone()),
    ];
    for (i, layer) in model.mlp.layers.iter().enumerate() {
        sections.push((format!("mlp.w{i}"), layer.weights.clone()));
        sections.push((format!("mlp.b{i}"), layer.biases.clone()));
    }
    for (i, tree) in model.forest.trees.iter().enumerate() {
        sections.push((format!("forest.t{i}"), encode_tree(tree, class_count)));
    }

    let mut directory = Vec::with_capacity(sections.len());
    let mut offset = 0u64;
    for (name, values) in &sections {
        let len = (values.len() * 8) as u64;
        directory.push(SectionEntry {
            name: name.clone(),
            offset,
            len,
        });
        offset += len;
    }

    let metadata = Metadata {
        classes: model.codec.classes().to_vec(),
        column_spec: model.column_spec.clone(),
        config: model.config.clone(),
        standardizer_fitted_on: model.standardizer.fitted_on,
        extractor_seed: model.extractor.init_seed(),
        filter_count: model.extractor.filter_count(),
        kernel_size: model.extractor.kernel_size(),
        mlp_layers: model
            .mlp
            .layers
            .iter()
            .map(|l| LayerShape {
                input_dim: l.input_dim,
                output_dim: l.output_dim,
                activation: l.activation,
            })
            .collect(),
        tree_count: model.forest.trees.len(),
        meta_input_width: model.meta.input_width,
        sections: directory,
    };
    let meta_json = serde_json::to_vec(&metadata).expect("metadata serializes");

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&model.format_version.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    for (_, values) in &sections {
        f64s_to_bytes(values, &mut out);
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn deserialize_model(bytes: &[u8]) -> Result<HybridModel, StoreError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(StoreError::Truncated("header incomplete".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(&bytes[..bytes.len() - 4]);
    if stored_crc != computed {
        return Err(StoreError::CrcMismatch {
            stored: stored_crc,
            computed,
        });
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let meta_end = 12 + meta_len;
    if meta_end > bytes.len() - 4 {
        return Err(StoreError::Truncated("metadata exceeds file".into()));
    }
    let metadata: Metadata = serde_json::from_slice(&bytes[12..meta_end])
        .map_err(|e| StoreError::BadMetadata(e.to_string()))?;
    let payload = &bytes[meta_end..bytes.len() - 4];

    // directory sanity: in-bounds, non-overlapping
    let mut cursor = 0u64;
    for entry in &metadata.sections {
        if entry.offset != cursor {
            return Err(StoreError::BadMetadata(format!(
                "section {:?} offset {} not contiguous (expected {})",
                entry.name, entry.offset, cursor
            )));
        }
        cursor += entry.len;
    }
    if cursor != payload.len() as u64 {
        return Err(StoreError::Truncated(format!(
            "payload is {} bytes, directory claims {}",
            payload.len(),
            cursor
        )));
    }

    let section = |name: &str| -> Result<Vec<f64>, StoreError> {
        let entry = metadata
            .sections
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| StoreError::BadMetadata(format!("missing section {name:?}")))?;
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        Ok(bytes_to_f64s(&payload[start..end]))
    };

    let class_count = metadata.classes.len();
    let standardizer = Standardizer {
        means: section("standardizer.means")?,
        stds: section("standardizer.stds")?,
        fitted_on: metadata.standardizer_fitted_on,
    };
    let flat_weights = section("extractor.weights")?;
    if flat_weights.len() != metadata.filter_count * metadata.kernel_size {
        return Err(StoreError::BadMetadata("extractor weight shape mismatch".into()));
    }
    let extractor = ConvExtractor::from_parts(
        flat_weights
            .chunks_exact(metadata.kernel_size)
            .map(<[f64]>::to_vec)
            .collect(),
        section("extractor.biases")?,
        metadata.extractor_seed,
    )
    .map_err(|e| StoreError::BadMetadata(e.to_string()))?;

    let mut layers = Vec::with_capacity(metadata.mlp_layers.len());
    for (i, shape) in metadata.mlp_layers.iter().enumerate() {
        let weights = section(&format!("mlp.w{i}"))?;
        let biases = section(&format!("mlp.b{i}"))?;
        if weights.len() != shape.input_dim * shape.output_dim || biases.len() != shape.output_dim
        {
            return Err(StoreError::BadMetadata(format!("mlp layer {i} shape mismatch")));
        }
        layers.push(LayerParams {
            weights,
            biases,
            input_dim: shape.input_dim,
            output_dim: shape.output_dim,
            activation: shape.activation,
        });
    }
    let input_dim = layers
        .first()
        .map(|l| l.input_dim)
        .ok_or_else(|| StoreError::BadMetadata("no mlp layers".into()))?;
    let mlp = MlpModel {
        layers,
        input_dim,
        class_count,
        train_log: TrainLog::default(),
    };

    let mut trees = Vec::with_capacity(metadata.tree_count);
    for i in 0..metadata.tree_count {
        trees.push(decode_tree(&section(&format!("forest.t{i}"))?, class_count)?);
    }
    let forest = ForestModel {
        trees,
        config: metadata.config.forest.clone(),
        class_count,
        feature_count: metadata.filter_count,
    };

    let meta_weights = section("meta.weights")?;
    let meta_biases = section("meta.biases")?;
    if meta_weights.len() != class_count * metadata.meta_input_width
        || meta_biases.len() != class_count
    {
        return Err(StoreError::BadMetadata("meta learner shape mismatch".into()));
    }
    let meta = MetaLearner {
        weights: meta_weights,
        biases: meta_biases,
        input_width: metadata.meta_input_width,
        class_count,
    };

    Ok(HybridModel {
        extractor,
        standardizer,
        forest,
        mlp,
        meta,
        codec: LabelCodec::from_classes(metadata.classes),
        column_spec: metadata.column_spec,
        config: metadata.config,
        format_version: version,
    })
}

/// Write the container; returns bytes written.
pub fn save(model: &HybridModel, path: impl AsRef<Path>) -> Result<u64, StoreError> {
    let bytes = serialize_model(model);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load(path: impl AsRef<Path>) -> Result<HybridModel, StoreError> {
    let bytes = std::fs::read(path)?;
    deserialize_model(&bytes)
}
