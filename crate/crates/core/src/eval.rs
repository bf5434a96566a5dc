//! Task evaluation: WER/CER via dynamic-programming edit distance,
//! teacher-forced perplexity, and frame-space reconstruction error.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameMatrix;
use crate::index::IndexFile;
use crate::manifest::DatasetManifest;
use crate::model::optim::eval_loss;
use crate::model::real::Real;
use crate::model::transformer::Params;
use crate::model::ModelConfig;
use crate::sequence::assemble_sequence;
use crate::template::TaskTemplate;
use crate::util;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalUnit {
    Word,
    Char,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimal edit script between reference and hypothesis, decomposed by a
/// diagonal-preferring backtrace.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut dist = vec![0u32; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dist[idx(i, 0)] = i as u32;
    }
    for j in 0..=m {
        dist[idx(0, j)] = j as u32;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = u32::from(reference[i - 1] != hypothesis[j - 1]);
            dist[idx(i, j)] = (dist[idx(i - 1, j - 1)] + cost)
                .min(dist[idx(i - 1, j)] + 1)
                .min(dist[idx(i, j - 1)] + 1);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = u32::from(reference[i - 1] != hypothesis[j - 1]);
            if dist[idx(i, j)] == dist[idx(i - 1, j - 1)] + cost {
                if cost == 1 {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[idx(i, j)] == dist[idx(i - 1, j)] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

fn tokenize(s: &str, unit: EvalUnit) -> Vec<String> {
    match unit {
        EvalUnit::Word => s.split_whitespace().map(str::to_string).collect(),
        EvalUnit::Char => s.chars().map(String::from).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub example_id: String,
    pub hypothesis: String,
    pub reference: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_name: String,
    pub metrics: BTreeMap<String, f64>,
    pub records: Vec<ExampleRecord>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serialization");
        out.push(b'\n');
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task: {}\n", self.task_name));
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k}: {v}\n"));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out.push_str(&format!("examples: {}\n", self.records.len()));
        out
    }

    pub fn save(&self, json_path: &Path, text_path: &Path) -> Result<()> {
        util::write_if_changed(json_path, &self.to_json_bytes())?;
        util::write_if_changed(text_path, self.to_text().as_bytes())?;
        Ok(())
    }
}

/// Corpus error rate: total edits over total reference length, with
/// per-example rates in the records. Hypothesis and reference files must
/// cover the same example ids.
pub fn edit_distance_wer(
    hyps: &IndexFile,
    refs: &IndexFile,
    unit: EvalUnit,
    task_name: &str,
) -> Result<EvalReport> {
    let hyp_ids: BTreeSet<&str> = hyps.ids().collect();
    let ref_ids: BTreeSet<&str> = refs.ids().collect();
    if hyp_ids != ref_ids {
        let missing: Vec<&&str> = ref_ids.symmetric_difference(&hyp_ids).collect();
        return Err(Error::Eval(format!(
            "hypothesis and reference ids differ: {missing:?}"
        )));
    }
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut totals = EditCounts::default();
    let mut total_ref = 0usize;
    for entry in &refs.entries {
        let hyp = hyps.get(&entry.example_id).unwrap_or_default();
        let r = tokenize(&entry.content, unit);
        let h = tokenize(hyp, unit);
        if r.is_empty() {
            warnings.push(format!(
                "example '{}' has an empty reference; excluded from the corpus rate",
                entry.example_id
            ));
            continue;
        }
        let counts = edit_counts(&r, &h);
        totals.substitutions += counts.substitutions;
        totals.deletions += counts.deletions;
        totals.insertions += counts.insertions;
        total_ref += r.len();
        records.push(ExampleRecord {
            example_id: entry.example_id.clone(),
            hypothesis: hyp.to_string(),
            reference: entry.content.clone(),
            value: counts.total() as f64 / r.len() as f64,
        });
    }
    if total_ref == 0 {
        return Err(Error::Eval("no non-empty references to score".into()));
    }
    let metric_name = match unit {
        EvalUnit::Word => "wer",
        EvalUnit::Char => "cer",
    };
    let mut metrics = BTreeMap::new();
    metrics.insert(metric_name.to_string(), totals.total() as f64 / total_ref as f64);
    metrics.insert("substitutions".into(), totals.substitutions as f64);
    metrics.insert("deletions".into(), totals.deletions as f64);
    metrics.insert("insertions".into(), totals.insertions as f64);
    metrics.insert("reference_tokens".into(), total_ref as f64);
    Ok(EvalReport {
        task_name: task_name.to_string(),
        metrics,
        records,
        warnings,
    })
}

/// Teacher-forced perplexity over a manifest: exp of the mean masked
/// negative log-likelihood with every weight at 1 (the loss-balancing
/// table deliberately plays no part here).
pub fn perplexity<F: Real>(
    params: &Params<F>,
    cfg: &ModelConfig,
    manifest: &DatasetManifest,
    template: &TaskTemplate,
    vocab: &Vocabulary,
) -> Result<f64> {
    let mut seqs = Vec::with_capacity(manifest.examples.len());
    for ex in &manifest.examples {
        // Assembly defaults every masked weight to 1.
        seqs.push(assemble_sequence(template, &ex.items, vocab, cfg.n_q)?);
    }
    Ok(eval_loss(params, cfg, &seqs)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMse {
    pub mse: f64,
    /// hypothesis frames / reference frames.
    pub length_ratio: f64,
}

/// Mean squared error over the overlapping prefix after truncating to the
/// shorter of the two.
pub fn frame_mse(hyp: &FrameMatrix, reference: &FrameMatrix) -> Result<FrameMse> {
    if hyp.dim() != reference.dim() {
        return Err(Error::DimMismatch {
            expected: reference.dim(),
            got: hyp.dim(),
        });
    }
    if reference.n_frames() == 0 {
        return Err(Error::Eval("empty reference frames".into()));
    }
    let n = hyp.n_frames().min(reference.n_frames());
    if n == 0 {
        return Err(Error::Eval("no overlapping frames to compare".into()));
    }
    let mut sum = 0.0;
    for t in 0..n {
        for (a, b) in hyp.row(t).iter().zip(reference.row(t)) {
            sum += (a - b) * (a - b);
        }
    }
    Ok(FrameMse {
        mse: sum / (n * hyp.dim()) as f64,
        length_ratio: hyp.n_frames() as f64 / reference.n_frames() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interleave;

    fn idx(name: &str, lines: &[(&str, &str)]) -> IndexFile {
        IndexFile {
            item_name: name.into(),
            entries: lines
                .iter()
                .map(|(id, c)| crate::index::IndexEntry {
                    example_id: id.to_string(),
                    content: c.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn identical_files_score_zero() {
        let refs = idx("text", &[("e1", "a b c"), ("e2", "d e")]);
        let report = edit_distance_wer(&refs, &refs, EvalUnit::Word, "asr").unwrap();
        assert_eq!(report.metrics["wer"], 0.0);
        assert_eq!(report.records.len(), 2);
    }

    #[test]
    fn hand_counted_example() {
        // ref "a b c", hyp "a x c d": one substitution, one insertion.
        let refs = idx("text", &[("e1", "a b c")]);
        let hyps = idx("text", &[("e1", "a x c d")]);
        let report = edit_distance_wer(&hyps, &refs, EvalUnit::Word, "asr").unwrap();
        assert!((report.metrics["wer"] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.metrics["substitutions"], 1.0);
        assert_eq!(report.metrics["insertions"], 1.0);
        assert_eq!(report.metrics["deletions"], 0.0);
    }

    #[test]
    fn id_mismatch_is_an_error() {
        let refs = idx("text", &[("e1", "a"), ("e2", "b")]);
        let hyps = idx("text", &[("e1", "a")]);
        assert!(edit_distance_wer(&hyps, &refs, EvalUnit::Word, "asr").is_err());
    }

    #[test]
    fn empty_reference_warns_and_is_excluded() {
        let refs = idx("text", &[("e1", "a b"), ("e2", " ")]);
        let hyps = idx("text", &[("e1", "a b"), ("e2", "x")]);
        let report = edit_distance_wer(&hyps, &refs, EvalUnit::Word, "asr").unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.metrics["wer"], 0.0);
    }

    #[test]
    fn distance_is_symmetric_with_swapped_roles() {
        let pairs = [("abc", "abd"), ("kitten", "sitting"), ("", "abc"), ("aa", "aaaa")];
        for (a, b) in pairs {
            let ta: Vec<char> = a.chars().collect();
            let tb: Vec<char> = b.chars().collect();
            assert_eq!(
                edit_counts(&ta, &tb).total(),
                edit_counts(&tb, &ta).total()
            );
        }
    }

    #[test]
    fn triangle_inequality_on_fuzzed_triples() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut sample = || {
                let len = rng.random_range(0..6usize);
                (0..len)
                    .map(|_| rng.random_range(0..3u8))
                    .collect::<Vec<u8>>()
            };
            let (a, b, c) = (sample(), sample(), sample());
            let ab = edit_counts(&a, &b).total();
            let bc = edit_counts(&b, &c).total();
            let ac = edit_counts(&a, &c).total();
            assert!(ac <= ab + bc, "{a:?} {b:?} {c:?}");
        }
    }

    #[test]
    fn cer_counts_characters() {
        let refs = idx("text", &[("e1", "abc")]);
        let hyps = idx("text", &[("e1", "axc")]);
        let report = edit_distance_wer(&hyps, &refs, EvalUnit::Char, "asr").unwrap();
        assert!((report.metrics["cer"] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn frame_mse_basics() {
        let a = FrameMatrix::from_rows(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(frame_mse(&a, &a).unwrap().mse, 0.0);
        let b = FrameMatrix::from_rows(2, vec![2.0, 3.0, 4.0, 5.0]).unwrap();
        let out = frame_mse(&b, &a).unwrap();
        assert_eq!(out.mse, 1.0);
        assert_eq!(out.length_ratio, 1.0);
    }

    #[test]
    fn frame_mse_truncates_and_reports_ratio() {
        let long = FrameMatrix::from_rows(1, (0..10).map(f64::from).collect()).unwrap();
        let short = FrameMatrix::from_rows(1, (0..8).map(f64::from).collect()).unwrap();
        let out = frame_mse(&long, &short).unwrap();
        assert_eq!(out.mse, 0.0);
        assert_eq!(out.length_ratio, 1.25);
        let bad = FrameMatrix::from_rows(2, vec![0.0, 0.0]).unwrap();
        assert!(frame_mse(&bad, &short).is_err());
    }

    #[test]
    fn uniform_model_perplexity_equals_vocab_size() {
        use crate::manifest::{FileRef, ManifestExample, MANIFEST_SCHEMA_VERSION};
        use crate::tokenizer::TokenizedItem;
        use crate::vocab::{build_joint_vocabulary, Modality, TokenizerSpec};

        let vocab = build_joint_vocabulary(
            &[TokenizerSpec {
                name: "bpe".into(),
                local_size: 100,
                modality: Modality::Text,
            }],
            &["lm".to_string()],
        )
        .unwrap();
        assert_eq!(vocab.total_size(), 106);
        let template = TaskTemplate::parse(
            "task: lm\ncondition: prompt bpe\ntarget: cont bpe\n",
            "lm",
        )
        .unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ff_mult: 2,
            n_q: 1,
            vocab_size: 106,
            max_t: 16,
            interleave: Interleave::Parallel,
            seed: 0,
        };
        // All-zero parameters give identical logits everywhere.
        let params = Params::<f64>::zeros(&cfg);
        let mk = |n: usize| ManifestExample {
            example_id: format!("e{n}"),
            items: {
                let mut m = BTreeMap::new();
                m.insert(
                    "prompt".to_string(),
                    TokenizedItem {
                        tokenizer: "bpe".into(),
                        tokens: vec![vec![1], vec![2]],
                    },
                );
                m.insert(
                    "cont".to_string(),
                    TokenizedItem {
                        tokenizer: "bpe".into(),
                        tokens: vec![vec![3], vec![4], vec![5]],
                    },
                );
                m
            },
            length: 10,
        };
        let manifest = DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            dataset_name: "toy".into(),
            task_name: "lm".into(),
            vocabulary: FileRef {
                path: "v".into(),
                sha256: "0".into(),
            },
            tokenizers: BTreeMap::new(),
            examples: vec![mk(0)],
            rejects: vec![],
        };
        let ppl = perplexity(&params, &cfg, &manifest, &template, &vocab).unwrap();
        assert!((ppl - 106.0).abs() < 1e-6, "{ppl}");

        // Duplicating every example leaves perplexity unchanged.
        let mut doubled = manifest.clone();
        let mut extra = mk(1);
        extra.example_id = "e1".into();
        doubled.examples.push(extra);
        let ppl2 = perplexity(&params, &cfg, &doubled, &template, &vocab).unwrap();
        assert!((ppl - ppl2).abs() < 1e-9);
    }
}
