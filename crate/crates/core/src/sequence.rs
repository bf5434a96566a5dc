//! Multi-stream training sequence assembly.
//!
//! A task's training sequence is laid out as
//!
//! ```text
//! [Bos][TaskId]  ([Indicator][item tokens...])*  [Eos]
//! ```
//!
//! with conditions spliced before targets. Every row holds `n_q` streams;
//! special rows and single-stream items are padded across streams with Pad.
//! The loss mask is true exactly on target-item content cells and the Eos
//! cell; conditions carry no loss.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::template::{ItemRole, TaskTemplate};
use crate::tokenizer::{TokenizedItem, TokenizerRegistry};
use crate::vocab::{Vocabulary, BOS, EOS, PAD};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpanLabel {
    Bos,
    TaskId(String),
    Indicator(String),
    Item {
        item: String,
        tokenizer: String,
        role: ItemRole,
    },
    Eos,
}

/// Half-open row range `[start, end)` of one sequence segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: SpanLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStreamSequence {
    pub n_q: usize,
    /// T x n_q global token ids, row-major.
    pub grid: Vec<u32>,
    pub mask: Vec<bool>,
    pub weights: Vec<f32>,
    pub spans: Vec<Span>,
}

impl MultiStreamSequence {
    pub fn len(&self) -> usize {
        self.grid.len() / self.n_q
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn at(&self, t: usize, q: usize) -> u32 {
        self.grid[t * self.n_q + q]
    }

    pub fn mask_at(&self, t: usize, q: usize) -> bool {
        self.mask[t * self.n_q + q]
    }

    pub fn weight_at(&self, t: usize, q: usize) -> f32 {
        self.weights[t * self.n_q + q]
    }

    pub fn row(&self, t: usize) -> &[u32] {
        &self.grid[t * self.n_q..(t + 1) * self.n_q]
    }

    pub fn masked_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Rows whose mask holds at least one true cell.
    pub fn masked_rows(&self) -> usize {
        (0..self.len())
            .filter(|&t| (0..self.n_q).any(|q| self.mask_at(t, q)))
            .count()
    }
}

struct Builder {
    n_q: usize,
    grid: Vec<u32>,
    mask: Vec<bool>,
    weights: Vec<f32>,
    spans: Vec<Span>,
}

impl Builder {
    fn new(n_q: usize) -> Self {
        Builder {
            n_q,
            grid: Vec::new(),
            mask: Vec::new(),
            weights: Vec::new(),
            spans: Vec::new(),
        }
    }

    fn rows(&self) -> usize {
        self.grid.len() / self.n_q
    }

    fn push_special(&mut self, id: u32, masked: bool, label: SpanLabel) {
        let start = self.rows();
        self.grid.push(id);
        self.mask.push(masked);
        self.weights.push(if masked { 1.0 } else { 0.0 });
        for _ in 1..self.n_q {
            self.grid.push(PAD);
            self.mask.push(false);
            self.weights.push(0.0);
        }
        self.spans.push(Span {
            start,
            end: start + 1,
            label,
        });
    }

    fn push_item(
        &mut self,
        template_name: &str,
        spec_item: &crate::template::DataItemSpec,
        item: &TokenizedItem,
        vocab: &Vocabulary,
    ) -> Result<()> {
        let streams = item.n_streams();
        if streams > self.n_q {
            return Err(Error::StreamOverflow {
                item: spec_item.item_name.clone(),
                streams,
                n_q: self.n_q,
            });
        }
        let indicator = vocab.indicator_id(&spec_item.tokenizer_name)?;
        self.push_special(
            indicator,
            false,
            SpanLabel::Indicator(spec_item.tokenizer_name.clone()),
        );
        let start = self.rows();
        let masked = spec_item.role == ItemRole::Target;
        for row in &item.tokens {
            if row.len() != streams {
                return Err(Error::Tokenize(format!(
                    "item '{}' of template '{}' has ragged stream counts",
                    spec_item.item_name, template_name
                )));
            }
            for &local in row {
                let global = vocab.token_to_global(&spec_item.tokenizer_name, local)?;
                self.grid.push(global);
                self.mask.push(masked);
                self.weights.push(if masked { 1.0 } else { 0.0 });
            }
            for _ in streams..self.n_q {
                self.grid.push(PAD);
                self.mask.push(false);
                self.weights.push(0.0);
            }
        }
        self.spans.push(Span {
            start,
            end: start + item.tokens.len(),
            label: SpanLabel::Item {
                item: spec_item.item_name.clone(),
                tokenizer: spec_item.tokenizer_name.clone(),
                role: spec_item.role,
            },
        });
        Ok(())
    }

    fn finish(self) -> MultiStreamSequence {
        MultiStreamSequence {
            n_q: self.n_q,
            grid: self.grid,
            mask: self.mask,
            weights: self.weights,
            spans: self.spans,
        }
    }
}

fn assemble(
    template: &TaskTemplate,
    items: &BTreeMap<String, TokenizedItem>,
    vocab: &Vocabulary,
    n_q: usize,
    include_targets: bool,
) -> Result<MultiStreamSequence> {
    let mut b = Builder::new(n_q);
    b.push_special(BOS, false, SpanLabel::Bos);
    b.push_special(
        vocab.task_id(&template.task_name)?,
        false,
        SpanLabel::TaskId(template.task_name.clone()),
    );
    let specs: Vec<_> = if include_targets {
        template.items().collect()
    } else {
        template.conditions.iter().collect()
    };
    for spec in specs {
        let item = items
            .get(&spec.item_name)
            .ok_or_else(|| Error::MissingItem(spec.item_name.clone()))?;
        b.push_item(&template.task_name, spec, item, vocab)?;
    }
    if include_targets {
        b.push_special(EOS, true, SpanLabel::Eos);
    }
    Ok(b.finish())
}

/// Builds the full training sequence: conditions, targets, terminating Eos.
pub fn assemble_sequence(
    template: &TaskTemplate,
    items: &BTreeMap<String, TokenizedItem>,
    vocab: &Vocabulary,
    n_q: usize,
) -> Result<MultiStreamSequence> {
    assemble(template, items, vocab, n_q, true)
}

/// The condition-only portion: `[Bos][TaskId][indicator+tokens per
/// condition]`, identical to the head of the full assembly.
pub fn assemble_prefix(
    template: &TaskTemplate,
    items: &BTreeMap<String, TokenizedItem>,
    vocab: &Vocabulary,
    n_q: usize,
) -> Result<MultiStreamSequence> {
    assemble(template, items, vocab, n_q, false)
}

/// Fills per-cell loss weights from the per-tokenizer table. Target cells
/// take the weight of their stream's class; the Eos cell keeps weight 1.
pub fn compute_token_weights(
    seq: &mut MultiStreamSequence,
    weight_table: &BTreeMap<String, f64>,
    registry: &TokenizerRegistry,
) -> Result<()> {
    for span in &seq.spans {
        let SpanLabel::Item {
            tokenizer, role, ..
        } = &span.label
        else {
            continue;
        };
        if *role != ItemRole::Target {
            continue;
        }
        let streams = registry.get(tokenizer)?.stream_specs();
        let mut per_stream = Vec::with_capacity(streams.len());
        for s in &streams {
            let w = weight_table
                .get(&s.weight_key)
                .copied()
                .ok_or_else(|| Error::MissingWeight(s.weight_key.clone()))?;
            per_stream.push(w as f32);
        }
        for t in span.start..span.end {
            for (q, w) in per_stream.iter().enumerate() {
                if seq.mask_at(t, q) {
                    seq.weights[t * seq.n_q + q] = *w;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::FrameMatrix;
    use crate::template::TaskTemplate;
    use crate::tokenizer::{codec_train, ssl_train, Tokenizer, TokenizerKind};
    use crate::vocab::{build_joint_vocabulary, Modality, Resolved, SpecialKind, TokenizerSpec};

    fn item(tok: &str, rows: Vec<Vec<u32>>) -> TokenizedItem {
        TokenizedItem {
            tokenizer: tok.into(),
            tokens: rows,
        }
    }

    fn asr_vocab(codec_ssl_size: u32) -> Vocabulary {
        build_joint_vocabulary(
            &[
                TokenizerSpec {
                    name: "codec_ssl".into(),
                    local_size: codec_ssl_size,
                    modality: Modality::Audio,
                },
                TokenizerSpec {
                    name: "bpe".into(),
                    local_size: 50,
                    modality: Modality::Text,
                },
            ],
            &["asr".to_string()],
        )
        .unwrap()
    }

    fn asr_template() -> TaskTemplate {
        TaskTemplate::parse(
            "task: asr\ncondition: wav codec_ssl\ntarget: text bpe\n",
            "asr",
        )
        .unwrap()
    }

    #[test]
    fn asr_layout_with_nine_streams() {
        // 3 frames of 9 streams, 2 text tokens, n_q = 9:
        // Bos + Task + Ind + 3 + Ind + 2 + Eos = 10 rows.
        let vocab = asr_vocab(200);
        let wav_rows: Vec<Vec<u32>> = (0..3).map(|t| (0..9).map(|q| t + q).collect()).collect();
        let mut items = BTreeMap::new();
        items.insert("wav".to_string(), item("codec_ssl", wav_rows));
        items.insert("text".to_string(), item("bpe", vec![vec![1], vec![2]]));
        let seq = assemble_sequence(&asr_template(), &items, &vocab, 9).unwrap();
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.n_q, 9);
        // Mask rows: 2 text rows + Eos.
        assert_eq!(seq.masked_rows(), 3);
        assert_eq!(seq.masked_cells(), 3); // text is single-stream, Eos on stream 0
        assert_eq!(seq.at(0, 0), BOS);
        assert_eq!(seq.at(0, 1), PAD);
        assert_eq!(seq.at(9, 0), EOS);
    }

    #[test]
    fn minimal_single_stream_layout() {
        let vocab = asr_vocab(10);
        let mut items = BTreeMap::new();
        items.insert("wav".to_string(), item("codec_ssl", vec![vec![0]]));
        items.insert("text".to_string(), item("bpe", vec![vec![0]]));
        let seq = assemble_sequence(&asr_template(), &items, &vocab, 1).unwrap();
        assert_eq!(seq.len(), 7);
        assert_eq!(seq.masked_cells(), 2);
    }

    #[test]
    fn missing_item_is_named() {
        let vocab = asr_vocab(10);
        let mut items = BTreeMap::new();
        items.insert("wav".to_string(), item("codec_ssl", vec![vec![0]]));
        let err = assemble_sequence(&asr_template(), &items, &vocab, 1).unwrap_err();
        assert!(err.to_string().contains("'text'"));
    }

    #[test]
    fn stream_overflow_rejected() {
        let vocab = asr_vocab(30);
        let mut items = BTreeMap::new();
        items.insert(
            "wav".to_string(),
            item("codec_ssl", vec![vec![0, 1, 2], vec![3, 4, 5]]),
        );
        items.insert("text".to_string(), item("bpe", vec![vec![0]]));
        let err = assemble_sequence(&asr_template(), &items, &vocab, 2).unwrap_err();
        assert!(matches!(err, Error::StreamOverflow { .. }));
    }

    #[test]
    fn length_identity_and_no_delay_pad() {
        let vocab = asr_vocab(30);
        let mut items = BTreeMap::new();
        items.insert(
            "wav".to_string(),
            item("codec_ssl", vec![vec![0, 10, 20]; 5]),
        );
        items.insert("text".to_string(), item("bpe", vec![vec![7]; 4]));
        let seq = assemble_sequence(&asr_template(), &items, &vocab, 3).unwrap();
        // T = 3 + M + N + total item length
        assert_eq!(seq.len(), 3 + 1 + 1 + 5 + 4);
        for t in 0..seq.len() {
            for q in 0..seq.n_q {
                let id = seq.at(t, q);
                assert!(id != crate::vocab::DELAY_PAD);
                assert!(vocab.global_to_region(id).is_ok());
            }
        }
    }

    #[test]
    fn conditions_never_masked() {
        let vocab = asr_vocab(30);
        let mut items = BTreeMap::new();
        items.insert(
            "wav".to_string(),
            item("codec_ssl", vec![vec![0, 10, 20]; 5]),
        );
        items.insert("text".to_string(), item("bpe", vec![vec![7]; 4]));
        let seq = assemble_sequence(&asr_template(), &items, &vocab, 3).unwrap();
        for span in &seq.spans {
            if let SpanLabel::Item { role, .. } = &span.label {
                if *role == ItemRole::Condition {
                    for t in span.start..span.end {
                        for q in 0..seq.n_q {
                            assert!(!seq.mask_at(t, q));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn prefix_equals_head_of_full_assembly() {
        let vocab = asr_vocab(30);
        let mut items = BTreeMap::new();
        items.insert(
            "wav".to_string(),
            item("codec_ssl", vec![vec![0, 10, 20]; 3]),
        );
        items.insert("text".to_string(), item("bpe", vec![vec![7]; 2]));
        let full = assemble_sequence(&asr_template(), &items, &vocab, 3).unwrap();
        let prefix = assemble_prefix(&asr_template(), &items, &vocab, 3).unwrap();
        assert_eq!(prefix.len(), 1 + 1 + 1 + 3);
        assert_eq!(
            prefix.grid.as_slice(),
            &full.grid[..prefix.grid.len()],
            "prefix must be the head of the full sequence"
        );
    }

    #[test]
    fn reassembly_is_identical() {
        let vocab = asr_vocab(30);
        let mut items = BTreeMap::new();
        items.insert(
            "wav".to_string(),
            item("codec_ssl", vec![vec![0, 10, 20]; 3]),
        );
        items.insert("text".to_string(), item("bpe", vec![vec![7]; 2]));
        let a = assemble_sequence(&asr_template(), &items, &vocab, 3).unwrap();
        let b = assemble_sequence(&asr_template(), &items, &vocab, 3).unwrap();
        assert_eq!(a, b);
    }

    fn fused_registry() -> TokenizerRegistry {
        let mut rows = Vec::new();
        for i in 0..64 {
            rows.extend_from_slice(&[(i % 8) as f64, ((i * 3) % 8) as f64]);
        }
        let data = FrameMatrix::from_rows(2, rows).unwrap();
        let mut reg = TokenizerRegistry::new();
        reg.insert(Tokenizer {
            name: "codec_ssl".into(),
            kind: TokenizerKind::CodecSsl {
                ssl_name: "ssl".into(),
                codec_name: "codec".into(),
                ssl: ssl_train(&data, 4, 1).unwrap(),
                codec: codec_train(&data, 8, 4, 2).unwrap(),
            },
        })
        .unwrap();
        reg.insert(Tokenizer {
            name: "bpe".into(),
            kind: TokenizerKind::Subword(
                crate::tokenizer::subword_train(&["ab".to_string()], 3, 0).unwrap(),
            ),
        })
        .unwrap();
        reg
    }

    #[test]
    fn codec_ssl_frame_weight_sums_to_one_text_token() {
        // Table 1 : 0.5 : 0.0625 with 8 codec streams: 0.5 + 8*0.0625 = 1.0.
        let reg = fused_registry();
        let fused_size = reg.get("codec_ssl").unwrap().local_vocab_size();
        let vocab = build_joint_vocabulary(
            &[
                reg.get("codec_ssl").unwrap().spec(),
                reg.get("bpe").unwrap().spec(),
            ],
            &["tts".to_string()],
        )
        .unwrap();
        assert_eq!(fused_size, 4 + 32);
        let template = TaskTemplate::parse(
            "task: tts\ncondition: text bpe\ntarget: wav codec_ssl\n",
            "tts",
        )
        .unwrap();
        let mut items = BTreeMap::new();
        items.insert("text".to_string(), item("bpe", vec![vec![0]]));
        let wav_rows: Vec<Vec<u32>> = vec![(0..9)
            .map(|q| if q == 0 { 1 } else { 4 + (q as u32 - 1) * 4 })
            .collect()];
        items.insert("wav".to_string(), item("codec_ssl", wav_rows));
        let mut seq = assemble_sequence(&template, &items, &vocab, 9).unwrap();
        let mut table = BTreeMap::new();
        table.insert("bpe".to_string(), 1.0);
        table.insert("ssl".to_string(), 0.5);
        table.insert("codec".to_string(), 0.0625);
        compute_token_weights(&mut seq, &table, &reg).unwrap();
        let frame_row = seq
            .spans
            .iter()
            .find_map(|s| match &s.label {
                SpanLabel::Item { role, .. } if *role == ItemRole::Target => Some(s.start),
                _ => None,
            })
            .unwrap();
        let sum: f32 = (0..9).map(|q| seq.weight_at(frame_row, q)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_table_matches_mask() {
        let reg = fused_registry();
        let vocab = asr_vocab(36);
        let mut items = BTreeMap::new();
        items.insert("wav".to_string(), item("codec_ssl", vec![vec![0, 4, 8]; 2]));
        items.insert("text".to_string(), item("bpe", vec![vec![1], vec![2]]));
        let mut seq = assemble_sequence(&asr_template(), &items, &vocab, 3).unwrap();
        let mut table = BTreeMap::new();
        table.insert("bpe".to_string(), 1.0);
        compute_token_weights(&mut seq, &table, &reg).unwrap();
        for i in 0..seq.grid.len() {
            assert_eq!(seq.weights[i], if seq.mask[i] { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn missing_weight_entry_is_an_error() {
        let reg = fused_registry();
        let vocab = build_joint_vocabulary(
            &[
                reg.get("codec_ssl").unwrap().spec(),
                reg.get("bpe").unwrap().spec(),
            ],
            &["tts".to_string()],
        )
        .unwrap();
        let template = TaskTemplate::parse(
            "task: tts\ncondition: text bpe\ntarget: wav codec_ssl\n",
            "tts",
        )
        .unwrap();
        let mut items = BTreeMap::new();
        items.insert("text".to_string(), item("bpe", vec![vec![0]]));
        items.insert(
            "wav".to_string(),
            item("codec_ssl", vec![vec![0, 4, 8, 12, 16, 20, 24, 28, 32]]),
        );
        let mut seq = assemble_sequence(&template, &items, &vocab, 9).unwrap();
        let mut table = BTreeMap::new();
        table.insert("ssl".to_string(), 0.5);
        let err = compute_token_weights(&mut seq, &table, &reg).unwrap_err();
        assert!(matches!(err, Error::MissingWeight(ref k) if k == "codec"));
    }

    #[test]
    fn span_labels_cover_the_sequence() {
        let vocab = asr_vocab(30);
        let mut items = BTreeMap::new();
        items.insert("wav".to_string(), item("codec_ssl", vec![vec![0, 1, 2]; 2]));
        items.insert("text".to_string(), item("bpe", vec![vec![3]]));
        let seq = assemble_sequence(&asr_template(), &items, &vocab, 3).unwrap();
        let mut covered = 0;
        for s in &seq.spans {
            assert_eq!(s.start, covered);
            covered = s.end;
        }
        assert_eq!(covered, seq.len());
        match vocab.global_to_region(seq.at(1, 0)).unwrap() {
            Resolved::Special(s) => {
                assert_eq!(s.kind, SpecialKind::TaskId("asr".into()))
            }
            other => panic!("expected task id, got {other:?}"),
        }
    }
}
