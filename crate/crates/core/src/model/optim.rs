//! Training step: adaptive-moment updates with warmup-then-constant learning
//! rate and global gradient-norm clipping.

use crate::error::{Error, Result};
use crate::model::interleave::delay_apply;
use crate::model::loss::{
    cross_entropy_grad, rows_needing_logits, weight_denominator, weighted_cross_entropy,
};
use crate::model::real::Real;
use crate::model::transformer::{backward, forward_cached, LogitRows, Params};
use crate::model::{Interleave, ModelConfig};
use crate::sequence::MultiStreamSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Worker threads per step; the batch is split into this many contiguous
    /// chunks and chunk results combine in index order, so the outcome does
    /// not depend on scheduling.
    pub threads: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            peak_lr: 1e-3,
            warmup_steps: 0,
            clip: 1.0,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            threads: 1,
        }
    }
}

/// Linear warmup to `peak`, constant afterwards.
pub fn lr_at(step: u64, warmup: u64, peak: f64) -> f64 {
    if warmup == 0 || step >= warmup {
        peak
    } else {
        peak * step as f64 / warmup as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub cfg: ModelConfig,
    pub params: Params<F>,
    pub m: Params<F>,
    pub v: Params<F>,
    pub step: u64,
}

impl<F: Real> TrainState<F> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let params = Params::init(&cfg);
        let m = Params::zeros(&cfg);
        let v = Params::zeros(&cfg);
        Ok(TrainState {
            cfg,
            params,
            m,
            v,
            step: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub tokens: usize,
}

fn chunk_ranges(len: usize, threads: usize) -> Vec<std::ops::Range<usize>> {
    let n = threads.clamp(1, len.max(1));
    let base = len / n;
    let extra = len % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

fn grads_for_chunk<F: Real>(
    params: &Params<F>,
    cfg: &ModelConfig,
    seqs: &[MultiStreamSequence],
    denom: f64,
) -> Result<(f64, Params<F>)> {
    let mut grads = Params::zeros(cfg);
    let mut numer = 0.0;
    for seq in seqs {
        let rows = rows_needing_logits(seq);
        let (logits, cache) = forward_cached(params, cfg, &seq.grid, &LogitRows::Rows(rows))?;
        let ce = weighted_cross_entropy(&logits, seq)?;
        numer += ce.numer;
        let dlogits = cross_entropy_grad(&logits, seq, denom);
        backward(params, cfg, &seq.grid, &cache, &dlogits, &mut grads);
    }
    Ok((numer, grads))
}

/// One optimizer step over a batch of assembled sequences. Delay-interleaved
/// models train on the shifted grids; the reported token count stays in
/// original rows.
pub fn train_step<F: Real>(
    state: &mut TrainState<F>,
    batch: &[MultiStreamSequence],
    opt: &OptimConfig,
    tags: &str,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Model("empty batch".into()));
    }
    let tokens: usize = batch.iter().map(MultiStreamSequence::len).sum();
    let seqs: Vec<MultiStreamSequence> = match state.cfg.interleave {
        Interleave::Parallel => batch.to_vec(),
        Interleave::Delay => batch.iter().map(delay_apply).collect(),
    };
    let denom: f64 = seqs.iter().map(weight_denominator).sum();
    if denom == 0.0 {
        return Err(Error::Model("batch carries no supervised cells".into()));
    }

    let ranges = chunk_ranges(seqs.len(), opt.threads);
    let mut numer = 0.0;
    let mut grads = Params::zeros(&state.cfg);
    if ranges.len() == 1 {
        let (n, g) = grads_for_chunk(&state.params, &state.cfg, &seqs, denom)?;
        numer = n;
        grads = g;
    } else {
        let params = &state.params;
        let cfg = &state.cfg;
        let seqs = &seqs;
        let results: Vec<Result<(f64, Params<F>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .map(|r| {
                    let r = r.clone();
                    scope.spawn(move || grads_for_chunk(params, cfg, &seqs[r], denom))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for res in results {
            let (n, g) = res?;
            numer += n;
            grads.add_scaled(&g, F::one());
        }
    }

    let loss = numer / denom;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            tags: tags.to_string(),
        });
    }

    let mut sq_norm = 0.0f64;
    for (_, g) in grads.visit() {
        for &v in &g.data {
            let v = v.to_f64();
            sq_norm += v * v;
        }
    }
    let grad_norm = sq_norm.sqrt();
    let clip_scale = if grad_norm > opt.clip && opt.clip > 0.0 {
        opt.clip / grad_norm
    } else {
        1.0
    };

    state.step += 1;
    let lr = lr_at(state.step, opt.warmup_steps, opt.peak_lr);
    let bc1 = 1.0 - opt.beta1.powi(state.step as i32);
    let bc2 = 1.0 - opt.beta2.powi(state.step as i32);
    let (b1, b2) = (F::from_f64(opt.beta1), F::from_f64(opt.beta2));
    let one_m_b1 = F::from_f64(1.0 - opt.beta1);
    let one_m_b2 = F::from_f64(1.0 - opt.beta2);
    let scale = F::from_f64(clip_scale);
    let eps = F::from_f64(opt.eps);
    let lr_m = F::from_f64(lr / bc1);
    let inv_sqrt_bc2 = F::from_f64(1.0 / bc2.sqrt());
    for (((_, p), (_, m)), ((_, v), (_, g))) in state
        .params
        .visit_mut()
        .into_iter()
        .zip(state.m.visit_mut())
        .zip(state.v.visit_mut().into_iter().zip(grads.visit()))
    {
        for i in 0..p.data.len() {
            let gi = g.data[i] * scale;
            m.data[i] = b1 * m.data[i] + one_m_b1 * gi;
            v.data[i] = b2 * v.data[i] + one_m_b2 * gi * gi;
            let update = lr_m * m.data[i] / ((v.data[i]).sqrt() * inv_sqrt_bc2 + eps);
            p.data[i] = p.data[i] - update;
        }
    }

    Ok(StepStats {
        step: state.step,
        loss,
        lr,
        grad_norm,
        tokens,
    })
}

/// Teacher-forced loss over a fixed set of sequences, no parameter updates.
pub fn eval_loss<F: Real>(
    params: &Params<F>,
    cfg: &ModelConfig,
    batch: &[MultiStreamSequence],
) -> Result<f64> {
    let mut numer = 0.0;
    let mut denom = 0.0;
    for seq in batch {
        let seq = match cfg.interleave {
            Interleave::Parallel => seq.clone(),
            Interleave::Delay => delay_apply(seq),
        };
        let rows = rows_needing_logits(&seq);
        let (logits, _) = forward_cached(params, cfg, &seq.grid, &LogitRows::Rows(rows))?;
        let ce = weighted_cross_entropy(&logits, &seq)?;
        numer += ce.numer;
        denom += ce.denom;
    }
    if denom == 0.0 {
        return Err(Error::Model("no supervised cells in eval batch".into()));
    }
    Ok(numer / denom)
}
