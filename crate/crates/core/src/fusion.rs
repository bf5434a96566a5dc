//! Multitask fusion: a sampling view over several dataset manifests with
//! adjustable per-dataset weights, and token-budget mini-batch sampling.
//!
//! Dataset choice is weighted with replacement; examples inside a dataset
//! are drawn from a seeded shuffle without replacement per pass, so small
//! datasets are fully covered. The whole batch stream is a pure function of
//! (sources, weights, budget, seed).

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::sequence::{assemble_sequence, compute_token_weights, MultiStreamSequence};
use crate::template::TaskTemplate;
use crate::tokenizer::TokenizerRegistry;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone)]
pub struct FusionSource {
    pub manifest: DatasetManifest,
    pub template: TaskTemplate,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct FusedDataset {
    pub sources: Vec<FusionSource>,
    pub vocab_sha256: String,
}

/// Validates the sources and builds the sampling view. No example data is
/// copied; manifests must share one vocabulary hash.
pub fn fuse(sources: Vec<FusionSource>) -> Result<FusedDataset> {
    if sources.is_empty() {
        return Err(Error::Manifest("fusion needs at least one source".into()));
    }
    let vocab_sha256 = sources[0].manifest.vocabulary.sha256.clone();
    for s in &sources {
        if !(s.weight.is_finite() && s.weight > 0.0) {
            return Err(Error::Manifest(format!(
                "dataset '{}' has non-positive weight {}",
                s.manifest.dataset_name, s.weight
            )));
        }
        if s.manifest.examples.is_empty() {
            return Err(Error::EmptyDataset(s.manifest.dataset_name.clone()));
        }
        if s.manifest.vocabulary.sha256 != vocab_sha256 {
            return Err(Error::VocabHashMismatch {
                a: vocab_sha256,
                b: s.manifest.vocabulary.sha256.clone(),
            });
        }
    }
    Ok(FusedDataset {
        sources,
        vocab_sha256,
    })
}

/// Everything sequence assembly needs at sampling time.
pub struct AssembleContext<'a> {
    pub vocab: &'a Vocabulary,
    pub registry: &'a TokenizerRegistry,
    pub n_q: usize,
    pub loss_weights: &'a BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub sequences: Vec<MultiStreamSequence>,
    /// (dataset_name, example_id) per sequence.
    pub source_tags: Vec<(String, String)>,
    pub token_count: usize,
}

/// Resumable sampler position: enough to rebuild the exact batch stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSnapshot {
    pub choice_word_pos: u128,
    pub passes: Vec<u64>,
    pub cursors: Vec<usize>,
    pub pending: Option<(usize, usize)>,
}

pub struct BatchSampler<'a> {
    fused: &'a FusedDataset,
    seed: u64,
    choice_rng: ChaCha8Rng,
    cum_weights: Vec<f64>,
    orders: Vec<Vec<u32>>,
    passes: Vec<u64>,
    cursors: Vec<usize>,
    /// A drawn example that did not fit the previous budget.
    pending: Option<(usize, usize)>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(b.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn pass_order(seed: u64, source: usize, pass: u64, len: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, source as u64 + 1, pass));
    let mut order: Vec<u32> = (0..len as u32).collect();
    // Fisher-Yates
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

impl<'a> BatchSampler<'a> {
    pub fn new(fused: &'a FusedDataset, seed: u64) -> Self {
        let mut cum = 0.0;
        let cum_weights = fused
            .sources
            .iter()
            .map(|s| {
                cum += s.weight;
                cum
            })
            .collect();
        let orders = fused
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| pass_order(seed, i, 0, s.manifest.examples.len()))
            .collect();
        BatchSampler {
            fused,
            seed,
            choice_rng: ChaCha8Rng::seed_from_u64(mix(seed, 0, 0)),
            cum_weights,
            orders,
            passes: vec![0; fused.sources.len()],
            cursors: vec![0; fused.sources.len()],
            pending: None,
        }
    }

    pub fn snapshot(&self) -> SamplerSnapshot {
        SamplerSnapshot {
            choice_word_pos: self.choice_rng.get_word_pos(),
            passes: self.passes.clone(),
            cursors: self.cursors.clone(),
            pending: self.pending,
        }
    }

    pub fn restore(fused: &'a FusedDataset, seed: u64, snap: &SamplerSnapshot) -> Result<Self> {
        if snap.passes.len() != fused.sources.len() || snap.cursors.len() != fused.sources.len() {
            return Err(Error::Checkpoint(
                "sampler snapshot does not match the fused dataset".into(),
            ));
        }
        let mut s = Self::new(fused, seed);
        s.choice_rng.set_word_pos(snap.choice_word_pos);
        s.passes = snap.passes.clone();
        s.cursors = snap.cursors.clone();
        s.pending = snap.pending;
        for (i, src) in fused.sources.iter().enumerate() {
            s.orders[i] = pass_order(seed, i, s.passes[i], src.manifest.examples.len());
        }
        Ok(s)
    }

    /// Weighted dataset draw, with replacement.
    pub fn draw_source(&mut self) -> usize {
        let total = *self.cum_weights.last().unwrap();
        let r = self.choice_rng.random::<f64>() * total;
        self.cum_weights.partition_point(|&c| c <= r)
    }

    fn next_example(&mut self, source: usize) -> usize {
        if self.cursors[source] >= self.orders[source].len() {
            self.passes[source] += 1;
            self.orders[source] = pass_order(
                self.seed,
                source,
                self.passes[source],
                self.fused.sources[source].manifest.examples.len(),
            );
            self.cursors[source] = 0;
        }
        let idx = self.orders[source][self.cursors[source]] as usize;
        self.cursors[source] += 1;
        idx
    }

    /// Draws sequences until the token budget would be exceeded; a single
    /// over-budget sequence is emitted alone rather than truncated.
    pub fn sample_batch(&mut self, token_budget: usize, ctx: &AssembleContext<'_>) -> Result<Batch> {
        let mut sequences = Vec::new();
        let mut source_tags = Vec::new();
        let mut token_count = 0;
        loop {
            let (src, idx) = match self.pending.take() {
                Some(p) => p,
                None => {
                    let s = self.draw_source();
                    (s, self.next_example(s))
                }
            };
            let source = &self.fused.sources[src];
            let ex = &source.manifest.examples[idx];
            if !sequences.is_empty() && token_count + ex.length > token_budget {
                self.pending = Some((src, idx));
                break;
            }
            let mut seq = assemble_sequence(&source.template, &ex.items, ctx.vocab, ctx.n_q)?;
            compute_token_weights(&mut seq, ctx.loss_weights, ctx.registry)?;
            debug_assert_eq!(seq.len(), ex.length, "manifest length drifted from assembly");
            token_count += seq.len();
            sequences.push(seq);
            source_tags.push((
                source.manifest.dataset_name.clone(),
                ex.example_id.clone(),
            ));
            if token_count >= token_budget {
                break;
            }
        }
        Ok(Batch {
            sequences,
            source_tags,
            token_count,
        })
    }
}
