//! Autoregressive generation with greedy/beam/top-k/top-p strategies,
//! min/max length heuristics, and modality masking driven by tokenizer
//! indicators.
//!
//! Indicators and Eos live on stream 0. When stream 0 holds a special token,
//! the other streams are forced to Pad; inside an item span each stream is
//! restricted to its own slice of the region. Under delay interleaving the
//! loop runs in delayed space (stream q lags by q rows) and the output is
//! mapped back to original rows.

pub mod beam;
pub mod mask;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::real::Real;
use crate::model::transformer::{forward_cached, LogitRows, Params};
use crate::model::{Interleave, ModelConfig};
use crate::sequence::{assemble_prefix, MultiStreamSequence};
use crate::template::TaskTemplate;
use crate::tokenizer::{TokenizedItem, TokenizerRegistry};
use crate::vocab::{Vocabulary, DELAY_PAD, EOS, PAD};

pub use mask::{step_mask, stream_mask, ModalityState};

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Greedy,
    Beam { width: usize },
    TopK { k: usize, temperature: f64 },
    TopP { p: f64, temperature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeParams {
    pub strategy: Strategy,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        match &self.strategy {
            Strategy::Beam { width } if *width < 1 => {
                return Err(Error::Decode("beam width must be >= 1".into()))
            }
            Strategy::TopK { k, temperature } => {
                if *k < 1 {
                    return Err(Error::Decode("top-k needs k >= 1".into()));
                }
                if *temperature <= 0.0 {
                    return Err(Error::Decode("temperature must be positive".into()));
                }
            }
            Strategy::TopP { p, temperature } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::Decode("top-p needs 0 < p <= 1".into()));
                }
                if *temperature <= 0.0 {
                    return Err(Error::Decode("temperature must be positive".into()));
                }
            }
            _ => {}
        }
        if self.min_len > self.max_len {
            return Err(Error::Decode(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Everything a generation session needs to look at.
pub struct GenCtx<'a, F> {
    pub params: &'a Params<F>,
    pub cfg: &'a ModelConfig,
    pub template: &'a TaskTemplate,
    pub vocab: &'a Vocabulary,
    pub registry: &'a TokenizerRegistry,
    pub prefix: &'a MultiStreamSequence,
    pub min_len: usize,
    /// Cap on generated original rows (indicators, content, Eos).
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RowPlan {
    /// Indicator or Eos row: streams 1.. are Pad.
    Special,
    /// Content row of the given target index.
    Content(usize),
}

/// One in-flight generation: decided rows in original space plus the model
/// input grid (delayed space under Delay interleave).
#[derive(Clone)]
pub(crate) struct Session {
    pub state: ModalityState,
    pub rows: Vec<Vec<u32>>,
    pub plans: Vec<RowPlan>,
    pub input: Vec<u32>,
    /// Sum of stream-0 log-probabilities of chosen tokens (beam scoring).
    pub score: f64,
    pub complete: bool,
    pub done: bool,
}

impl Session {
    pub(crate) fn new<F: Real>(ctx: &GenCtx<'_, F>) -> Self {
        let n_q = ctx.cfg.n_q;
        let p_orig = ctx.prefix.len();
        let input = match ctx.cfg.interleave {
            Interleave::Parallel => ctx.prefix.grid.clone(),
            Interleave::Delay => {
                // Delayed rows 0..p_orig are fully determined by conditions.
                let mut grid = vec![DELAY_PAD; p_orig * n_q];
                for r in 0..p_orig {
                    for q in 0..n_q {
                        if r >= q {
                            grid[r * n_q + q] = ctx.prefix.at(r - q, q);
                        }
                    }
                }
                grid
            }
        };
        Session {
            state: ModalityState::new(),
            rows: Vec::new(),
            plans: Vec::new(),
            input,
            score: 0.0,
            complete: false,
            done: false,
        }
    }

    /// Generated stream-0 rows so far.
    pub(crate) fn len(&self) -> usize {
        self.plans.len()
    }

    pub(crate) fn norm_score(&self) -> f64 {
        self.score / self.plans.len().max(1) as f64
    }
}

pub(crate) fn log_softmax_row<F: Real>(row: &[F]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        max = max.max(v.to_f64());
    }
    let mut sum = 0.0;
    for &v in row {
        sum += (v.to_f64() - max).exp();
    }
    let lse = max + sum.ln();
    row.iter().map(|&v| v.to_f64() - lse).collect()
}

/// Token choice over an explicit candidate set.
pub(crate) struct Chooser {
    strategy: Strategy,
    rng: ChaCha8Rng,
}

impl Chooser {
    pub(crate) fn new(strategy: Strategy, seed: u64) -> Self {
        Chooser {
            strategy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn choose<F: Real>(&mut self, row: &[F], candidates: &[u32]) -> Result<u32> {
        select_token(&self.strategy, row, candidates, &mut self.rng)
    }
}

mod select {
    use super::*;

    pub(super) fn greedy<F: Real>(row: &[F], candidates: &[u32]) -> u32 {
        let mut best = candidates[0];
        let mut best_v = f64::NEG_INFINITY;
        for &id in candidates {
            let v = row[id as usize].to_f64();
            if v > best_v {
                best_v = v;
                best = id;
            }
        }
        best
    }

    /// Softmax over the candidate set at the given temperature, sorted by
    /// probability (descending) with id ascending on ties.
    pub(super) fn candidate_probs<F: Real>(
        row: &[F],
        candidates: &[u32],
        temperature: f64,
    ) -> Vec<(u32, f64)> {
        let mut max = f64::NEG_INFINITY;
        for &id in candidates {
            max = max.max(row[id as usize].to_f64());
        }
        let mut out: Vec<(u32, f64)> = candidates
            .iter()
            .map(|&id| (id, ((row[id as usize].to_f64() - max) / temperature).exp()))
            .collect();
        let total: f64 = out.iter().map(|(_, p)| p).sum();
        for (_, p) in &mut out {
            *p /= total;
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    pub(super) fn draw(rng: &mut ChaCha8Rng, pool: &[(u32, f64)]) -> u32 {
        let total: f64 = pool.iter().map(|(_, p)| p).sum();
        let r = rng.random::<f64>() * total;
        let mut cum = 0.0;
        for &(id, p) in pool {
            cum += p;
            if r < cum {
                return id;
            }
        }
        pool.last().unwrap().0
    }
}

/// Picks one token from the candidate set under the given strategy. Beam
/// ranks hypotheses elsewhere, so it degenerates to greedy here.
pub fn select_token<F: Real>(
    strategy: &Strategy,
    row: &[F],
    candidates: &[u32],
    rng: &mut ChaCha8Rng,
) -> Result<u32> {
    if candidates.is_empty() {
        return Err(Error::Decode("empty candidate set".into()));
    }
    match strategy {
        Strategy::Greedy | Strategy::Beam { .. } => Ok(select::greedy(row, candidates)),
        Strategy::TopK { k, temperature } => {
            let probs = select::candidate_probs(row, candidates, *temperature);
            let pool = &probs[..(*k).min(probs.len())];
            Ok(select::draw(rng, pool))
        }
        Strategy::TopP { p, temperature } => {
            let probs = select::candidate_probs(row, candidates, *temperature);
            let mut cut = probs.len();
            let mut cum = 0.0;
            for (i, (_, pi)) in probs.iter().enumerate() {
                cum += pi;
                if cum >= *p {
                    cut = i + 1;
                    break;
                }
            }
            // Boundary ties are included.
            while cut < probs.len() && probs[cut].1 == probs[cut - 1].1 {
                cut += 1;
            }
            Ok(select::draw(rng, &probs[..cut]))
        }
    }
}

fn mask_to_candidates(mask: &[bool]) -> Vec<u32> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &ok)| ok.then_some(i as u32))
        .collect()
}

/// Last-position logits for the session's current input.
pub(crate) fn step_logits<F: Real>(
    sess: &Session,
    ctx: &GenCtx<'_, F>,
) -> Result<crate::model::transformer::Logits<F>> {
    Ok(forward_cached(ctx.params, ctx.cfg, &sess.input, &LogitRows::Last)?.0)
}

/// Decides the cells of one step given the logits. In parallel mode a step
/// is one original row; under delay it is one delayed row (stream q
/// contributes its cell of original row `step_row - q`).
pub(crate) fn apply_step<F: Real>(
    sess: &mut Session,
    ctx: &GenCtx<'_, F>,
    chooser: &mut Chooser,
    logits: &crate::model::transformer::Logits<F>,
    forced_stream0: Option<u32>,
) -> Result<()> {
    let n_q = ctx.cfg.n_q;
    let p_orig = ctx.prefix.len();

    let mut row_cells = vec![PAD; n_q];
    let delayed = ctx.cfg.interleave == Interleave::Delay;
    // Original row index this step's stream-0 cell belongs to.
    let step_row = sess.input.len() / n_q;

    // Stream 0.
    let generating0 = !sess.state.finished() && sess.len() < ctx.max_len;
    if generating0 {
        let mask = step_mask(&sess.state, ctx.template, ctx.vocab, ctx.registry, ctx.min_len)?;
        let candidates = mask_to_candidates(&mask);
        let row0 = logits.per_stream[0].row(0);
        let tok0 = match forced_stream0 {
            Some(t) => t,
            None => chooser.choose(row0, &candidates)?,
        };
        sess.score += log_softmax_row(row0)[tok0 as usize];
        sess.state.advance(tok0, ctx.template, ctx.vocab)?;
        let plan = if ctx.vocab.is_special(tok0) {
            RowPlan::Special
        } else {
            RowPlan::Content(sess.state.current_target().expect("content inside a span"))
        };
        sess.plans.push(plan);
        sess.rows.push(vec![PAD; n_q]);
        let last = sess.rows.len() - 1;
        sess.rows[last][0] = tok0;
        row_cells[0] = tok0;
        if tok0 == EOS {
            sess.complete = true;
        }
    } else if delayed {
        row_cells[0] = DELAY_PAD;
    }

    // Streams 1..n_q.
    for (q, row_cell) in row_cells.iter_mut().enumerate().skip(1) {
        let orig_row = if delayed {
            if step_row < q {
                *row_cell = DELAY_PAD;
                continue;
            }
            step_row - q
        } else {
            step_row
        };
        if orig_row < p_orig {
            *row_cell = ctx.prefix.at(orig_row, q);
            continue;
        }
        let gen_idx = orig_row - p_orig;
        if gen_idx >= sess.plans.len() {
            *row_cell = DELAY_PAD;
            continue;
        }
        let cell = match sess.plans[gen_idx] {
            RowPlan::Special => PAD,
            RowPlan::Content(target_idx) => {
                let tok_name = &ctx.template.targets[target_idx].tokenizer_name;
                match stream_mask(tok_name, q, ctx.vocab, ctx.registry)? {
                    None => PAD,
                    Some(range) => {
                        let candidates: Vec<u32> = range.collect();
                        chooser.choose(logits.per_stream[q].row(0), &candidates)?
                    }
                }
            }
        };
        sess.rows[gen_idx][q] = cell;
        *row_cell = cell;
    }

    sess.input.extend_from_slice(&row_cells);

    let ended = sess.state.finished() || sess.len() >= ctx.max_len;
    sess.done = if delayed {
        // Trailing steps fill the lagging streams of the last rows.
        ended && step_row + 1 >= p_orig + sess.len() + n_q - 1
    } else {
        ended
    };
    Ok(())
}

/// One forward-and-decide step; returns false once the session is done.
pub(crate) fn advance_session<F: Real>(
    sess: &mut Session,
    ctx: &GenCtx<'_, F>,
    chooser: &mut Chooser,
) -> Result<bool> {
    if sess.done {
        return Ok(false);
    }
    let logits = step_logits(sess, ctx)?;
    apply_step(sess, ctx, chooser, &logits, None)?;
    Ok(true)
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    /// Decoded target items, by item name, in flat local ids.
    pub items: BTreeMap<String, TokenizedItem>,
    /// Generated original-space rows, including indicator and Eos rows.
    pub rows: Vec<Vec<u32>>,
    /// Tokenizer names of emitted indicators, in order.
    pub indicators: Vec<String>,
    /// False when max_len cut generation short.
    pub complete: bool,
    /// Length-normalized sum of stream-0 log-probabilities of the chosen
    /// tokens (the beam ranking score).
    pub score: f64,
}

pub(crate) fn outcome_from_session<F: Real>(
    sess: &Session,
    ctx: &GenCtx<'_, F>,
) -> Result<GenerateOutcome> {
    let mut items = BTreeMap::new();
    let mut indicators = Vec::new();
    let mut open: Option<(usize, Vec<Vec<u32>>)> = None;
    let flush = |open: &mut Option<(usize, Vec<Vec<u32>>)>,
                     items: &mut BTreeMap<String, TokenizedItem>| {
        if let Some((idx, rows)) = open.take() {
            let spec = &ctx.template.targets[idx];
            items.insert(
                spec.item_name.clone(),
                TokenizedItem {
                    tokenizer: spec.tokenizer_name.clone(),
                    tokens: rows,
                },
            );
        }
    };
    for (gen_idx, plan) in sess.plans.iter().enumerate() {
        let row = &sess.rows[gen_idx];
        match plan {
            RowPlan::Special => {
                let tok0 = row[0];
                if tok0 != EOS {
                    // Indicator: open the next span.
                    flush(&mut open, &mut items);
                    if let crate::vocab::Resolved::Special(s) = ctx.vocab.global_to_region(tok0)? {
                        if let crate::vocab::SpecialKind::TokenizerIndicator(name) = &s.kind {
                            indicators.push(name.clone());
                        }
                    }
                    let idx = indicators.len() - 1;
                    open = Some((idx, Vec::new()));
                }
            }
            RowPlan::Content(target_idx) => {
                let spec = &ctx.template.targets[*target_idx];
                let region = ctx.vocab.region(&spec.tokenizer_name)?;
                let streams = ctx.registry.get(&spec.tokenizer_name)?.stream_specs();
                let locals: Vec<u32> = (0..streams.len())
                    .map(|q| row[q] - region.offset)
                    .collect();
                if let Some((_, rows)) = &mut open {
                    rows.push(locals);
                }
            }
        }
    }
    flush(&mut open, &mut items);
    Ok(GenerateOutcome {
        items,
        rows: sess.rows.clone(),
        indicators,
        complete: sess.complete,
        score: sess.norm_score(),
    })
}

/// Builds the generation prefix from the condition items; identical to the
/// condition portion of the full training assembly.
pub fn build_prefix(
    template: &TaskTemplate,
    condition_items: &BTreeMap<String, TokenizedItem>,
    vocab: &Vocabulary,
    n_q: usize,
) -> Result<MultiStreamSequence> {
    assemble_prefix(template, condition_items, vocab, n_q)
}

/// Caps the generated row budget so the model input never outgrows max_t.
fn effective_max_len(cfg: &ModelConfig, prefix_rows: usize, requested: usize) -> Result<usize> {
    let budget = match cfg.interleave {
        Interleave::Parallel => cfg.max_t.saturating_sub(prefix_rows),
        Interleave::Delay => cfg.max_t.saturating_sub(prefix_rows + cfg.n_q - 1),
    };
    if budget == 0 {
        return Err(Error::Decode(format!(
            "prefix of {prefix_rows} rows leaves no room under max_t {}",
            cfg.max_t
        )));
    }
    Ok(requested.min(budget))
}

/// Full constrained generation for one example.
pub fn generate<F: Real>(
    params: &Params<F>,
    cfg: &ModelConfig,
    template: &TaskTemplate,
    condition_items: &BTreeMap<String, TokenizedItem>,
    vocab: &Vocabulary,
    registry: &TokenizerRegistry,
    dp: &DecodeParams,
) -> Result<GenerateOutcome> {
    dp.validate()?;
    let prefix = build_prefix(template, condition_items, vocab, cfg.n_q)?;
    let max_len = effective_max_len(cfg, prefix.len(), dp.max_len)?;
    let ctx = GenCtx {
        params,
        cfg,
        template,
        vocab,
        registry,
        prefix: &prefix,
        min_len: dp.min_len,
        max_len,
    };
    if let Strategy::Beam { width } = dp.strategy {
        return beam::beam_generate(&ctx, width);
    }
    let mut chooser = Chooser::new(dp.strategy.clone(), dp.seed);
    let mut sess = Session::new(&ctx);
    while advance_session(&mut sess, &ctx, &mut chooser)? {}
    outcome_from_session(&sess, &ctx)
}

/// Replays an outcome against the mask state machine and fails on any token
/// outside its allowed set or any indicator out of template order.
pub fn audit_outcome(
    out: &GenerateOutcome,
    template: &TaskTemplate,
    vocab: &Vocabulary,
    registry: &TokenizerRegistry,
    min_len: usize,
) -> Result<()> {
    let mut state = ModalityState::new();
    for row in &out.rows {
        if state.finished() {
            return Err(Error::Decode("rows continue past Eos".into()));
        }
        let mask = step_mask(&state, template, vocab, registry, min_len)?;
        let tok0 = row[0];
        if !mask[tok0 as usize] {
            return Err(Error::Decode(format!(
                "stream 0 emitted {tok0} outside the allowed mask"
            )));
        }
        state.advance(tok0, template, vocab)?;
        let plan = if vocab.is_special(tok0) {
            None
        } else {
            Some(state.current_target().expect("content token inside a span"))
        };
        for (q, &cell) in row.iter().enumerate().skip(1) {
            match plan {
                None => {
                    if cell != PAD {
                        return Err(Error::Decode(format!(
                            "stream {q} of a special row holds {cell}, expected Pad"
                        )));
                    }
                }
                Some(target_idx) => {
                    let tok_name = &template.targets[target_idx].tokenizer_name;
                    match stream_mask(tok_name, q, vocab, registry)? {
                        None => {
                            if cell != PAD {
                                return Err(Error::Decode(format!(
                                    "stream {q} beyond the item width holds {cell}"
                                )));
                            }
                        }
                        Some(range) => {
                            if !range.contains(&cell) {
                                return Err(Error::Decode(format!(
                                    "stream {q} emitted {cell} outside {range:?}"
                                )));
                            }
                        }
                    }
                }
            }
        }
    }
    let expected: Vec<&str> = template
        .targets
        .iter()
        .map(|t| t.tokenizer_name.as_str())
        .take(out.indicators.len())
        .collect();
    let got: Vec<&str> = out.indicators.iter().map(String::as_str).collect();
    if got != expected {
        return Err(Error::Decode(format!(
            "indicator order {got:?} does not match template target order"
        )));
    }
    if out.complete && out.indicators.len() != template.targets.len() {
        return Err(Error::Decode(
            "generation finished without opening every target".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::FrameMatrix;
    use crate::model::transformer::Params;
    use crate::preprocess::detect_and_build_vocab;
    use crate::tokenizer::{codec_train, ssl_train, subword_train, Tokenizer, TokenizerKind};

    struct Setup {
        registry: TokenizerRegistry,
        vocab: Vocabulary,
        asr: TaskTemplate,
        tts: TaskTemplate,
    }

    fn setup() -> Setup {
        let mut rows = Vec::new();
        for i in 0..32 {
            rows.extend_from_slice(&[(i % 4) as f64 * 5.0, ((i * 7) % 4) as f64 * 5.0]);
        }
        let data = FrameMatrix::from_rows(2, rows).unwrap();
        let mut registry = TokenizerRegistry::new();
        registry
            .insert(Tokenizer {
                name: "codec_ssl".into(),
                kind: TokenizerKind::CodecSsl {
                    ssl_name: "ssl".into(),
                    codec_name: "codec".into(),
                    ssl: ssl_train(&data, 4, 1).unwrap(),
                    codec: codec_train(&data, 2, 4, 2).unwrap(),
                },
            })
            .unwrap();
        registry
            .insert(Tokenizer {
                name: "bpe".into(),
                kind: TokenizerKind::Subword(subword_train(&["abab".to_string()], 4, 0).unwrap()),
            })
            .unwrap();
        let asr = TaskTemplate::parse(
            "task: asr\ncondition: wav codec_ssl\ntarget: text bpe\n",
            "asr",
        )
        .unwrap();
        let tts = TaskTemplate::parse(
            "task: tts\ncondition: text bpe\ntarget: wav codec_ssl\n",
            "tts",
        )
        .unwrap();
        let vocab = detect_and_build_vocab(&[asr.clone(), tts.clone()], &registry).unwrap();
        Setup {
            registry,
            vocab,
            asr,
            tts,
        }
    }

    fn model(s: &Setup, interleave: Interleave, seed: u64) -> (ModelConfig, Params<f64>) {
        let cfg = ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            ff_mult: 2,
            n_q: 3,
            vocab_size: s.vocab.total_size() as usize,
            max_t: 48,
            interleave,
            seed,
        };
        let params = Params::random_all(&cfg, 0.4, seed);
        (cfg, params)
    }

    fn asr_conditions() -> BTreeMap<String, TokenizedItem> {
        let mut items = BTreeMap::new();
        items.insert(
            "wav".to_string(),
            TokenizedItem {
                tokenizer: "codec_ssl".into(),
                tokens: vec![vec![0, 4, 8], vec![1, 5, 9], vec![2, 6, 10]],
            },
        );
        items
    }

    fn tts_conditions() -> BTreeMap<String, TokenizedItem> {
        let mut items = BTreeMap::new();
        items.insert(
            "text".to_string(),
            TokenizedItem {
                tokenizer: "bpe".into(),
                tokens: vec![vec![0], vec![1]],
            },
        );
        items
    }

    fn dp(strategy: Strategy) -> DecodeParams {
        DecodeParams {
            strategy,
            min_len: 1,
            max_len: 12,
            seed: 9,
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let s = setup();
        let (cfg, params) = model(&s, Interleave::Parallel, 3);
        let run = || {
            generate(
                &params,
                &cfg,
                &s.asr,
                &asr_conditions(),
                &s.vocab,
                &s.registry,
                &dp(Strategy::Greedy),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.rows, b.rows);
        audit_outcome(&a, &s.asr, &s.vocab, &s.registry, 1).unwrap();
    }

    #[test]
    fn beam_width_one_equals_greedy() {
        let s = setup();
        for interleave in [Interleave::Parallel, Interleave::Delay] {
            let (cfg, params) = model(&s, interleave, 5);
            let g = generate(
                &params,
                &cfg,
                &s.asr,
                &asr_conditions(),
                &s.vocab,
                &s.registry,
                &dp(Strategy::Greedy),
            )
            .unwrap();
            let b = generate(
                &params,
                &cfg,
                &s.asr,
                &asr_conditions(),
                &s.vocab,
                &s.registry,
                &dp(Strategy::Beam { width: 1 }),
            )
            .unwrap();
            assert_eq!(g.rows, b.rows, "{interleave:?}");
        }
    }

    #[test]
    fn sampled_generations_stay_inside_masks() {
        let s = setup();
        for interleave in [Interleave::Parallel, Interleave::Delay] {
            let (cfg, params) = model(&s, interleave, 7);
            for (template, conditions) in
                [(&s.asr, asr_conditions()), (&s.tts, tts_conditions())]
            {
                for seed in 0..20 {
                    let mut p = dp(Strategy::TopK {
                        k: 30,
                        temperature: 0.8,
                    });
                    p.seed = seed;
                    let out = generate(
                        &params,
                        &cfg,
                        template,
                        &conditions,
                        &s.vocab,
                        &s.registry,
                        &p,
                    )
                    .unwrap();
                    audit_outcome(&out, template, &s.vocab, &s.registry, p.min_len).unwrap();
                }
            }
        }
    }

    #[test]
    fn top_p_generations_stay_inside_masks() {
        let s = setup();
        let (cfg, params) = model(&s, Interleave::Parallel, 11);
        for seed in 0..10 {
            let mut p = dp(Strategy::TopP {
                p: 0.9,
                temperature: 1.0,
            });
            p.seed = seed;
            let out = generate(
                &params,
                &cfg,
                &s.tts,
                &tts_conditions(),
                &s.vocab,
                &s.registry,
                &p,
            )
            .unwrap();
            audit_outcome(&out, &s.tts, &s.vocab, &s.registry, p.min_len).unwrap();
        }
    }

    #[test]
    fn tiny_max_len_flags_incomplete() {
        let s = setup();
        let (cfg, params) = model(&s, Interleave::Parallel, 3);
        let mut p = dp(Strategy::Greedy);
        p.min_len = 0;
        p.max_len = 2; // room for the indicator and one content row only
        let out = generate(
            &params,
            &cfg,
            &s.asr,
            &asr_conditions(),
            &s.vocab,
            &s.registry,
            &p,
        )
        .unwrap();
        assert!(!out.complete);
        assert_eq!(out.rows.len(), 2);
    }

    #[test]
    fn delayed_generation_fills_all_streams() {
        let s = setup();
        let (cfg, params) = model(&s, Interleave::Delay, 13);
        let out = generate(
            &params,
            &cfg,
            &s.tts,
            &tts_conditions(),
            &s.vocab,
            &s.registry,
            &dp(Strategy::Greedy),
        )
        .unwrap();
        audit_outcome(&out, &s.tts, &s.vocab, &s.registry, 1).unwrap();
        // Every generated content row carries all three streams of the fused
        // region; no DelayPad leaks into original-space rows.
        for row in &out.rows {
            for &cell in row {
                assert_ne!(cell, DELAY_PAD);
            }
        }
        if out.complete {
            let wav = &out.items["wav"];
            assert_eq!(wav.n_streams(), 3);
        }
    }

    #[test]
    fn min_len_defers_eos() {
        let s = setup();
        let (cfg, params) = model(&s, Interleave::Parallel, 3);
        let mut p = dp(Strategy::Greedy);
        p.min_len = 6;
        p.max_len = 12;
        let out = generate(
            &params,
            &cfg,
            &s.asr,
            &asr_conditions(),
            &s.vocab,
            &s.registry,
            &p,
        )
        .unwrap();
        if out.complete {
            assert!(out.rows.len() > 6);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(dp(Strategy::TopP {
            p: 0.0,
            temperature: 1.0
        })
        .validate()
        .is_err());
        assert!(dp(Strategy::TopK {
            k: 0,
            temperature: 1.0
        })
        .validate()
        .is_err());
        let mut p = dp(Strategy::Greedy);
        p.min_len = 5;
        p.max_len = 4;
        assert!(p.validate().is_err());
    }
}
