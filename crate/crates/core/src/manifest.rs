//! The unified per-dataset manifest produced by offline preprocessing.
//!
//! One JSON document per (task, split) with fixed key order and integer-only
//! numbers, so reruns over unchanged inputs are byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizedItem;
use crate::util;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Path plus content hash: how manifests pin their provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<FileRef> {
        Ok(FileRef {
            path: path.display().to_string(),
            sha256: util::sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestExample {
    pub example_id: String,
    pub items: BTreeMap<String, TokenizedItem>,
    /// Assembled sequence length T, used for token-budget batching.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub example_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub dataset_name: String,
    pub task_name: String,
    pub vocabulary: FileRef,
    pub tokenizers: BTreeMap<String, FileRef>,
    pub examples: Vec<ManifestExample>,
    pub rejects: Vec<Reject>,
}

impl DatasetManifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serialization");
        out.push(b'\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<bool> {
        util::write_if_changed(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = util::read_to_string(path)?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "{}: schema version {} unsupported (expected {})",
                path.display(),
                m.schema_version,
                MANIFEST_SCHEMA_VERSION
            )));
        }
        Ok(m)
    }

    pub fn example(&self, id: &str) -> Option<&ManifestExample> {
        self.examples.iter().find(|e| e.example_id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetManifest {
        let mut items = BTreeMap::new();
        items.insert(
            "text".to_string(),
            TokenizedItem {
                tokenizer: "bpe".into(),
                tokens: vec![vec![1], vec![2]],
            },
        );
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            dataset_name: "toy.train".into(),
            task_name: "asr".into(),
            vocabulary: FileRef {
                path: "vocab.txt".into(),
                sha256: "00".into(),
            },
            tokenizers: BTreeMap::new(),
            examples: vec![ManifestExample {
                example_id: "e1".into(),
                items,
                length: 7,
            }],
            rejects: vec![],
        }
    }

    #[test]
    fn json_roundtrip() {
        let m = sample();
        let bytes = m.to_bytes();
        let back: DatasetManifest = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn serialization_is_stable() {
        assert_eq!(sample().to_bytes(), sample().to_bytes());
    }
}
