//! JSON Lines dataset files, one instance per line:
//!
//! ```text
//! {"instance_id": 0, "bag_id": 0, "entity_pair_id": "pair-000000", "relation": 2,
//!  "features": [0.1, -1.3], "gold_relation": 0, "split": "train"}
//! ```
//!
//! Blank lines are skipped. Unknown fields are an error unless the reader is
//! lenient, in which case they are dropped with a warning.

use std::fs;
use std::path::Path;

use reif_core::data::{Dataset, DatasetRecord, Split};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const FIELDS: [&str; 7] = [
    "instance_id",
    "bag_id",
    "entity_pair_id",
    "relation",
    "features",
    "gold_relation",
    "split",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub lenient: bool,
    /// Class count; inferred from the labels when absent.
    pub num_classes: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    instance_id: u64,
    bag_id: u64,
    entity_pair_id: String,
    relation: usize,
    features: Vec<f64>,
    #[serde(default)]
    gold_relation: Option<usize>,
    split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

pub fn parse_dataset(text: &str, path: &Path, options: LoadOptions) -> Result<Loaded> {
    let line_err = |line: usize, message: String| Error::Line {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut obj: Map<String, Value> = serde_json::from_str(raw).map_err(|e| line_err(line, e.to_string()))?;
        let unknown: Vec<String> = obj.keys().filter(|k| !FIELDS.contains(&k.as_str())).cloned().collect();
        for field in unknown {
            if !options.lenient {
                return Err(line_err(line, format!("unknown field `{field}`")));
            }
            let msg = format!("{}: line {line}: ignoring unknown field `{field}`", path.display());
            log::warn!("{msg}");
            warnings.push(msg);
            obj.remove(&field);
        }
        let rec: JsonRecord = serde_json::from_value(Value::Object(obj)).map_err(|e| line_err(line, e.to_string()))?;
        records.push(DatasetRecord {
            instance_id: rec.instance_id,
            bag_id: rec.bag_id,
            entity_pair_id: rec.entity_pair_id,
            relation: rec.relation,
            features: rec.features,
            gold_relation: rec.gold_relation,
            split: rec.split,
        });
        lines.push(line);
    }
    let dataset = Dataset::from_records(records, options.num_classes).map_err(|e| match e {
        reif_core::Error::Record { index, instance_id, field, reason } => line_err(
            lines[index],
            format!("instance {instance_id}: field `{field}`: {reason}"),
        ),
        other => Error::Core(other),
    })?;
    Ok(Loaded { dataset, warnings })
}

pub fn read_dataset(path: &Path, options: LoadOptions) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path, options)
}

pub fn dataset_to_jsonl(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    for r in dataset.to_records() {
        let rec = JsonRecord {
            instance_id: r.instance_id,
            bag_id: r.bag_id,
            entity_pair_id: r.entity_pair_id,
            relation: r.relation,
            features: r.features,
            gold_relation: r.gold_relation,
            split: r.split,
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, dataset_to_jsonl(dataset)?).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
