//! Joint vocabulary: one global id space covering all special tokens and
//! every registered tokenizer's local ids.
//!
//! The layout is frozen so serialized vocabularies are stable across runs:
//! Pad=0, DelayPad=1, Bos=2, Eos=3, then one task id per task in registration
//! order, then one tokenizer indicator per tokenizer in registration order,
//! then one contiguous region per tokenizer in registration order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util;

pub const PAD: u32 = 0;
pub const DELAY_PAD: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
const N_FIXED_SPECIALS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Other,
}

impl Modality {
    fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "text" => Some(Modality::Text),
            "audio" => Some(Modality::Audio),
            "other" => Some(Modality::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecialKind {
    Pad,
    DelayPad,
    Bos,
    Eos,
    TaskId(String),
    TokenizerIndicator(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialToken {
    pub kind: SpecialKind,
    pub global_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabRegion {
    pub tokenizer_name: String,
    pub offset: u32,
    pub size: u32,
    pub modality: Modality,
}

/// Input to vocabulary construction: one entry per tokenizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerSpec {
    pub name: String,
    pub local_size: u32,
    pub modality: Modality,
}

/// What a global id resolves to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolved<'a> {
    Special(&'a SpecialToken),
    Region { region: &'a VocabRegion, local: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    specials: Vec<SpecialToken>,
    regions: Vec<VocabRegion>,
    total_size: u32,
    task_ids: BTreeMap<String, u32>,
    indicator_ids: BTreeMap<String, u32>,
    region_index: BTreeMap<String, usize>,
}

pub fn build_joint_vocabulary(
    tokenizers: &[TokenizerSpec],
    task_names: &[String],
) -> Result<Vocabulary> {
    let mut specials = vec![
        SpecialToken { kind: SpecialKind::Pad, global_id: PAD },
        SpecialToken { kind: SpecialKind::DelayPad, global_id: DELAY_PAD },
        SpecialToken { kind: SpecialKind::Bos, global_id: BOS },
        SpecialToken { kind: SpecialKind::Eos, global_id: EOS },
    ];
    let mut next = N_FIXED_SPECIALS;
    let mut task_ids = BTreeMap::new();
    for name in task_names {
        if task_ids.insert(name.clone(), next).is_some() {
            return Err(Error::DuplicateTask(name.clone()));
        }
        specials.push(SpecialToken {
            kind: SpecialKind::TaskId(name.clone()),
            global_id: next,
        });
        next += 1;
    }
    let mut indicator_ids = BTreeMap::new();
    for spec in tokenizers {
        if indicator_ids.insert(spec.name.clone(), next).is_some() {
            return Err(Error::DuplicateTokenizer(spec.name.clone()));
        }
        specials.push(SpecialToken {
            kind: SpecialKind::TokenizerIndicator(spec.name.clone()),
            global_id: next,
        });
        next += 1;
    }
    let mut regions = Vec::new();
    let mut region_index = BTreeMap::new();
    for (i, spec) in tokenizers.iter().enumerate() {
        debug_assert!(spec.local_size >= 1);
        regions.push(VocabRegion {
            tokenizer_name: spec.name.clone(),
            offset: next,
            size: spec.local_size,
            modality: spec.modality,
        });
        region_index.insert(spec.name.clone(), i);
        next += spec.local_size;
    }
    Ok(Vocabulary {
        specials,
        regions,
        total_size: next,
        task_ids,
        indicator_ids,
        region_index,
    })
}

impl Vocabulary {
    pub fn total_size(&self) -> u32 {
        self.total_size
    }

    pub fn specials(&self) -> &[SpecialToken] {
        &self.specials
    }

    pub fn regions(&self) -> &[VocabRegion] {
        &self.regions
    }

    pub fn task_id(&self, name: &str) -> Result<u32> {
        self.task_ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownTask(name.into()))
    }

    pub fn indicator_id(&self, name: &str) -> Result<u32> {
        self.indicator_ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownTokenizer(name.into()))
    }

    pub fn region(&self, name: &str) -> Result<&VocabRegion> {
        self.region_index
            .get(name)
            .map(|&i| &self.regions[i])
            .ok_or_else(|| Error::UnknownTokenizer(name.into()))
    }

    pub fn token_to_global(&self, tokenizer_name: &str, local_id: u32) -> Result<u32> {
        let region = self.region(tokenizer_name)?;
        if local_id >= region.size {
            return Err(Error::LocalIdOutOfRange {
                tokenizer: tokenizer_name.into(),
                local: local_id,
                size: region.size,
            });
        }
        Ok(region.offset + local_id)
    }

    pub fn global_to_region(&self, global_id: u32) -> Result<Resolved<'_>> {
        if global_id >= self.total_size {
            return Err(Error::GlobalIdOutOfRange {
                global: global_id,
                size: self.total_size,
            });
        }
        if let Some(special) = self.specials.get(global_id as usize) {
            debug_assert_eq!(special.global_id, global_id);
            return Ok(Resolved::Special(special));
        }
        // Regions are contiguous and sorted by offset.
        let idx = self
            .regions
            .partition_point(|r| r.offset + r.size <= global_id);
        let region = &self.regions[idx];
        Ok(Resolved::Region {
            region,
            local: global_id - region.offset,
        })
    }

    pub fn is_special(&self, global_id: u32) -> bool {
        (global_id as usize) < self.specials.len()
    }

    /// One line per global id: `<global_id>\t<kind>\t<name>\t<local_id>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.specials {
            let (kind, name) = match &s.kind {
                SpecialKind::Pad => ("pad", "-".to_string()),
                SpecialKind::DelayPad => ("delay_pad", "-".to_string()),
                SpecialKind::Bos => ("bos", "-".to_string()),
                SpecialKind::Eos => ("eos", "-".to_string()),
                SpecialKind::TaskId(n) => ("task", n.clone()),
                SpecialKind::TokenizerIndicator(n) => ("indicator", n.clone()),
            };
            writeln!(out, "{}\t{}\t{}\t0", s.global_id, kind, name).unwrap();
        }
        for r in &self.regions {
            for local in 0..r.size {
                writeln!(
                    out,
                    "{}\tregion:{}\t{}\t{}",
                    r.offset + local,
                    r.modality.as_str(),
                    r.tokenizer_name,
                    local
                )
                .unwrap();
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_if_changed(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut tasks = Vec::new();
        let mut tokenizers: Vec<TokenizerSpec> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::ParseLine {
                    file: file.into(),
                    line: idx + 1,
                    msg: "expected 4 tab-separated fields".into(),
                });
            }
            let kind = fields[1];
            let name = fields[2];
            match kind {
                "pad" | "delay_pad" | "bos" | "eos" => {}
                "task" => tasks.push(name.to_string()),
                "indicator" => {}
                _ => {
                    if let Some(modality) = kind.strip_prefix("region:").and_then(Modality::parse) {
                        match tokenizers.last_mut() {
                            Some(t) if t.name == name => t.local_size += 1,
                            _ => tokenizers.push(TokenizerSpec {
                                name: name.to_string(),
                                local_size: 1,
                                modality,
                            }),
                        }
                    } else {
                        return Err(Error::ParseLine {
                            file: file.into(),
                            line: idx + 1,
                            msg: format!("unknown entry kind {kind:?}"),
                        });
                    }
                }
            }
        }
        let rebuilt = build_joint_vocabulary(&tokenizers, &tasks)?;
        if rebuilt.to_text() != text {
            return Err(Error::ParseLine {
                file: file.into(),
                line: 1,
                msg: "vocabulary file does not match the canonical layout".into(),
            });
        }
        Ok(rebuilt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = util::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, size: u32, modality: Modality) -> TokenizerSpec {
        TokenizerSpec {
            name: name.into(),
            local_size: size,
            modality,
        }
    }

    #[test]
    fn asr_layout_counts() {
        // 4 fixed + 1 task + 1 indicator + 100 region ids
        let v = build_joint_vocabulary(
            &[spec("bpe", 100, Modality::Text)],
            &["asr".to_string()],
        )
        .unwrap();
        assert_eq!(v.total_size(), 106);
        assert_eq!(v.region("bpe").unwrap().offset, 6);
    }

    #[test]
    fn empty_vocab_is_just_fixed_specials() {
        let v = build_joint_vocabulary(&[], &[]).unwrap();
        assert_eq!(v.total_size(), 4);
    }

    #[test]
    fn regions_are_contiguous() {
        let v = build_joint_vocabulary(
            &[spec("a", 10, Modality::Text), spec("b", 20, Modality::Audio)],
            &[],
        )
        .unwrap();
        let ra = v.region("a").unwrap();
        let rb = v.region("b").unwrap();
        assert_eq!(rb.offset, ra.offset + 10);
        assert_eq!(rb.offset + rb.size - ra.offset, 30);
    }

    #[test]
    fn token_to_global_bounds() {
        let v = build_joint_vocabulary(
            &[spec("bpe", 100, Modality::Text)],
            &["asr".to_string()],
        )
        .unwrap();
        assert_eq!(v.token_to_global("bpe", 0).unwrap(), 6);
        assert_eq!(v.token_to_global("bpe", 99).unwrap(), 105);
        assert!(v.token_to_global("bpe", 100).is_err());
        assert!(v.token_to_global("nope", 0).is_err());
    }

    #[test]
    fn global_to_region_classifies() {
        let v = build_joint_vocabulary(
            &[spec("bpe", 100, Modality::Text)],
            &["asr".to_string()],
        )
        .unwrap();
        match v.global_to_region(0).unwrap() {
            Resolved::Special(s) => assert_eq!(s.kind, SpecialKind::Pad),
            other => panic!("expected special, got {other:?}"),
        }
        match v.global_to_region(6).unwrap() {
            Resolved::Region { region, local } => {
                assert_eq!(region.tokenizer_name, "bpe");
                assert_eq!(local, 0);
            }
            other => panic!("expected region, got {other:?}"),
        }
        assert!(v.global_to_region(106).is_err());
    }

    #[test]
    fn bijection_over_all_ids() {
        let v = build_joint_vocabulary(
            &[spec("a", 10, Modality::Text), spec("b", 20, Modality::Audio)],
            &["asr".to_string(), "tts".to_string()],
        )
        .unwrap();
        for g in 0..v.total_size() {
            match v.global_to_region(g).unwrap() {
                Resolved::Special(s) => assert_eq!(s.global_id, g),
                Resolved::Region { region, local } => {
                    assert_eq!(
                        v.token_to_global(&region.tokenizer_name, local).unwrap(),
                        g
                    );
                }
            }
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = build_joint_vocabulary(
            &[spec("a", 1, Modality::Text), spec("a", 2, Modality::Text)],
            &[],
        )
        .unwrap_err();
        assert!(err.to_string().contains("'a'"));
        let err =
            build_joint_vocabulary(&[], &["t".to_string(), "t".to_string()]).unwrap_err();
        assert!(err.to_string().contains("'t'"));
    }

    #[test]
    fn serialization_roundtrip_is_byte_identical() {
        let v = build_joint_vocabulary(
            &[spec("bpe", 5, Modality::Text), spec("codec", 8, Modality::Audio)],
            &["asr".to_string()],
        )
        .unwrap();
        let text = v.to_text();
        let v2 = Vocabulary::parse(&text, "mem").unwrap();
        assert_eq!(v2.to_text(), text);
        assert_eq!(v2, v);
    }
}
