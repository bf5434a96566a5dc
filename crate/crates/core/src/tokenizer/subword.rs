//! Trainable subword tokenizer: greedy pair merging over a character base.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SubwordModel {
    /// Character inventory, sorted; ids 0..base_symbols.len().
    pub base_symbols: Vec<String>,
    /// Ordered merges; merge i produces symbol id base_symbols.len() + i.
    pub merges: Vec<(String, String)>,
    /// Set when training exhausted all pairs before reaching the target size.
    pub incomplete: bool,
    pub seed: u64,
    symbols: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl SubwordModel {
    pub fn from_parts(
        base_symbols: Vec<String>,
        merges: Vec<(String, String)>,
        incomplete: bool,
        seed: u64,
    ) -> Self {
        let mut symbols = base_symbols.clone();
        symbols.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        let ids = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        SubwordModel {
            base_symbols,
            merges,
            incomplete,
            seed,
            symbols,
            ids,
        }
    }

    pub fn vocab_size(&self) -> u32 {
        self.symbols.len() as u32
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }
}

fn apply_merge(seq: &mut Vec<String>, a: &str, b: &str) {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut seq[i]));
            i += 1;
        }
    }
    *seq = out;
}

/// Greedy pair-merge training. The most frequent adjacent pair wins each
/// round; frequency ties break by lexicographic pair order.
pub fn subword_train(corpus: &[String], target_vocab_size: u32, seed: u64) -> Result<SubwordModel> {
    if corpus.is_empty() {
        return Err(Error::Tokenize("subword training corpus is empty".into()));
    }
    let mut base: Vec<String> = corpus
        .iter()
        .flat_map(|line| line.chars())
        .map(|c| c.to_string())
        .collect();
    base.sort();
    base.dedup();
    if target_vocab_size <= base.len() as u32 {
        return Err(Error::Tokenize(format!(
            "target vocab size {target_vocab_size} must exceed the {} distinct characters",
            base.len()
        )));
    }

    let mut sequences: Vec<Vec<String>> = corpus
        .iter()
        .map(|line| line.chars().map(|c| c.to_string()).collect())
        .collect();
    let mut merges = Vec::new();
    let mut incomplete = false;
    while (base.len() + merges.len()) < target_vocab_size as usize {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for seq in &sequences {
            for pair in seq.windows(2) {
                *counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += 1;
            }
        }
        // Order by count, with the lexicographically smaller pair ranked
        // higher on ties; keys are unique so the max is unambiguous.
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(p, _)| p.clone());
        let Some((a, b)) = best else {
            incomplete = true;
            break;
        };
        for seq in &mut sequences {
            apply_merge(seq, &a, &b);
        }
        merges.push((a, b));
    }
    Ok(SubwordModel::from_parts(base, merges, incomplete, seed))
}

pub fn subword_encode(model: &SubwordModel, text: &str) -> Result<Vec<u32>> {
    let mut seq: Vec<String> = Vec::with_capacity(text.chars().count());
    for (pos, c) in text.chars().enumerate() {
        let s = c.to_string();
        if !model.ids.contains_key(&s) {
            return Err(Error::OutOfInventory { ch: c, pos });
        }
        seq.push(s);
    }
    for (a, b) in &model.merges {
        apply_merge(&mut seq, a, b);
    }
    Ok(seq.iter().map(|s| model.ids[s]).collect())
}

pub fn subword_decode(model: &SubwordModel, tokens: &[u32]) -> Result<String> {
    let mut out = String::new();
    for &id in tokens {
        let s = model.symbol(id).ok_or(Error::LocalIdOutOfRange {
            tokenizer: "subword".into(),
            local: id,
            size: model.vocab_size(),
        })?;
        out.push_str(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn aaaa_merges_to_two_or_fewer_tokens() {
        let m = subword_train(&corpus(&["aaaa"]), 3, 0).unwrap();
        assert_eq!(m.base_symbols, vec!["a".to_string()]);
        assert_eq!(m.merges[0], ("a".to_string(), "a".to_string()));
        assert_eq!(m.merges[1], ("aa".to_string(), "aa".to_string()));
        assert!(subword_encode(&m, "aaaa").unwrap().len() <= 2);
    }

    #[test]
    fn single_pair_corpus() {
        let m = subword_train(&corpus(&["ab"]), 3, 0).unwrap();
        assert_eq!(m.merges, vec![("a".to_string(), "b".to_string())]);
        assert_eq!(subword_encode(&m, "ab").unwrap().len(), 1);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(subword_train(&[], 10, 0).is_err());
    }

    #[test]
    fn unreachable_target_sets_incomplete_flag() {
        let m = subword_train(&corpus(&["ab"]), 10, 0).unwrap();
        assert!(m.incomplete);
        assert!(m.vocab_size() < 10);
    }

    #[test]
    fn empty_text_roundtrip() {
        let m = subword_train(&corpus(&["ab"]), 3, 0).unwrap();
        assert!(subword_encode(&m, "").unwrap().is_empty());
        assert_eq!(subword_decode(&m, &[]).unwrap(), "");
    }

    #[test]
    fn roundtrip_on_corpus_sentences() {
        let lines = corpus(&["the cat sat", "the bat", "a cat and a bat sat"]);
        let m = subword_train(&lines, 20, 0).unwrap();
        for line in &lines {
            let ids = subword_encode(&m, line).unwrap();
            assert_eq!(subword_decode(&m, &ids).unwrap(), *line);
        }
    }

    #[test]
    fn out_of_inventory_reports_position() {
        let m = subword_train(&corpus(&["ab"]), 3, 0).unwrap();
        let err = subword_encode(&m, "abz").unwrap_err();
        assert!(err.to_string().contains("position 2"), "{err}");
    }

    #[test]
    fn ids_stay_below_vocab_size() {
        let lines = corpus(&["abracadabra", "carb", "bar"]);
        let m = subword_train(&lines, 9, 0).unwrap();
        for line in &lines {
            for id in subword_encode(&m, line).unwrap() {
                assert!(id < m.vocab_size());
            }
        }
    }

    #[test]
    fn deterministic() {
        let lines = corpus(&["mississippi", "missile"]);
        let a = subword_train(&lines, 12, 1).unwrap();
        let b = subword_train(&lines, 12, 1).unwrap();
        assert_eq!(a, b);
    }
}
