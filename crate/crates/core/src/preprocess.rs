//! Offline preprocessing: scan dataset folders of index files, tokenize
//! every item, and emit the unified manifest plus the joint vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frames::FrameMatrix;
use crate::index::IndexFile;
use crate::manifest::{DatasetManifest, FileRef, ManifestExample, Reject, MANIFEST_SCHEMA_VERSION};
use crate::template::TaskTemplate;
use crate::tokenizer::{TokenizedItem, Tokenizer, TokenizerRegistry};
use crate::vocab::{build_joint_vocabulary, Modality, Vocabulary};

/// An example id that is missing from some item's index file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMismatch {
    pub example_id: String,
    pub present_in: String,
    pub missing_from: String,
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    /// One parsed index file per template item.
    pub indexes: BTreeMap<String, IndexFile>,
    pub mismatches: Vec<IdMismatch>,
}

/// Reads one index file per template item from `dir` and reports ids that
/// are present in one file but not another.
pub fn scan_dataset_folder(dir: &Path, template: &TaskTemplate) -> Result<ScanResult> {
    let mut indexes = BTreeMap::new();
    for item in template.items() {
        let path = dir.join(&item.item_name);
        if !path.is_file() {
            return Err(Error::MissingIndexFile {
                item: item.item_name.clone(),
                dir: dir.to_path_buf(),
            });
        }
        indexes.insert(item.item_name.clone(), IndexFile::load(&path, &item.item_name)?);
    }
    let mut mismatches = Vec::new();
    let names: Vec<&String> = indexes.keys().collect();
    for a in &names {
        let ids_a: BTreeSet<&str> = indexes[a.as_str()].ids().collect();
        for b in &names {
            if a == b {
                continue;
            }
            let ids_b: BTreeSet<&str> = indexes[b.as_str()].ids().collect();
            for id in ids_a.difference(&ids_b) {
                mismatches.push(IdMismatch {
                    example_id: (*id).to_string(),
                    present_in: (*a).clone(),
                    missing_from: (*b).clone(),
                });
            }
        }
    }
    Ok(ScanResult {
        indexes,
        mismatches,
    })
}

fn encode_content(
    tokenizer: &Tokenizer,
    content: &str,
    base_dir: &Path,
) -> Result<TokenizedItem> {
    match tokenizer.modality() {
        Modality::Text => tokenizer.encode_text(content),
        Modality::Audio | Modality::Other => {
            let path = base_dir.join(content);
            let frames = FrameMatrix::load(&path)?;
            tokenizer.encode_frames(&frames)
        }
    }
}

/// Tokenizes every shared example and assembles the manifest. Examples are
/// ordered by the first condition item's index file; per-example failures
/// land in `rejects` rather than aborting the run.
#[allow(clippy::too_many_arguments)]
pub fn tokenize_dataset(
    scan: &ScanResult,
    template: &TaskTemplate,
    registry: &TokenizerRegistry,
    dataset_dir: &Path,
    dataset_name: &str,
    vocabulary: FileRef,
    tokenizer_refs: BTreeMap<String, FileRef>,
) -> Result<DatasetManifest> {
    template.check_tokenizers(registry)?;
    let shared: BTreeSet<&str> = {
        let mut iter = scan.indexes.values();
        let mut shared: BTreeSet<&str> = iter
            .next()
            .map(|f| f.ids().collect())
            .unwrap_or_default();
        for f in iter {
            let ids: BTreeSet<&str> = f.ids().collect();
            shared = shared.intersection(&ids).copied().collect();
        }
        shared
    };
    let first_condition = &template.conditions[0].item_name;
    let order: Vec<String> = scan.indexes[first_condition]
        .ids()
        .filter(|id| shared.contains(id))
        .map(str::to_string)
        .collect();

    let mut examples = Vec::new();
    let mut rejects = Vec::new();
    'example: for id in &order {
        let mut items = BTreeMap::new();
        let mut total_len = 0usize;
        for spec in template.items() {
            let content = scan.indexes[&spec.item_name].get(id).expect("shared id");
            let tokenizer = registry.get(&spec.tokenizer_name)?;
            match encode_content(tokenizer, content, dataset_dir) {
                Ok(item) => {
                    total_len += item.len();
                    items.insert(spec.item_name.clone(), item);
                }
                Err(e) => {
                    rejects.push(Reject {
                        example_id: id.clone(),
                        reason: format!("item '{}': {e}", spec.item_name),
                    });
                    continue 'example;
                }
            }
        }
        // T = Bos + TaskId + Eos + one indicator per item + content rows.
        let n_items = template.conditions.len() + template.targets.len();
        examples.push(ManifestExample {
            example_id: id.clone(),
            items,
            length: 3 + n_items + total_len,
        });
    }
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        dataset_name: dataset_name.to_string(),
        task_name: template.task_name.clone(),
        vocabulary,
        tokenizers: tokenizer_refs,
        examples,
        rejects,
    })
}

/// Collects the tokenizers named by the templates, in template declaration
/// order and deduplicated, and builds the joint vocabulary over them.
pub fn detect_and_build_vocab(
    templates: &[TaskTemplate],
    registry: &TokenizerRegistry,
) -> Result<Vocabulary> {
    let mut seen = BTreeSet::new();
    let mut specs = Vec::new();
    let mut tasks = Vec::new();
    for template in templates {
        tasks.push(template.task_name.clone());
        for name in template.tokenizers_in_order() {
            if seen.insert(name.clone()) {
                specs.push(registry.get(&name)?.spec());
            }
        }
    }
    build_joint_vocabulary(&specs, &tasks)
}
