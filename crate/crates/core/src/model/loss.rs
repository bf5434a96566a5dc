//! Weighted cross-entropy over masked target cells.
//!
//! The logit row at forward position t scores grid row t+1; only cells with
//! a true loss mask contribute. The scalar loss is the weight-normalized sum
//! of per-cell negative log-likelihoods, accumulated in f64.

use crate::error::{Error, Result};
use crate::model::real::{Mat, Real};
use crate::model::transformer::Logits;
use crate::sequence::MultiStreamSequence;

#[derive(Debug, Clone)]
pub struct CeOut {
    /// numer / denom.
    pub loss: f64,
    /// Sum of weight * nll over masked cells.
    pub numer: f64,
    /// Sum of weights over masked cells.
    pub denom: f64,
    /// Per-cell nll, T x n_q row-major, zero at unmasked cells.
    pub per_position: Vec<f64>,
}

/// Forward positions whose next row carries at least one masked cell; these
/// are the only rows that need logits during training.
pub fn rows_needing_logits(seq: &MultiStreamSequence) -> Vec<usize> {
    let t_len = seq.len();
    (0..t_len.saturating_sub(1))
        .filter(|&t| (0..seq.n_q).any(|q| seq.mask_at(t + 1, q)))
        .collect()
}

/// Sum of loss weights over masked cells reachable by teacher forcing
/// (rows 1..T); this is the loss denominator and needs no forward pass.
pub fn weight_denominator(seq: &MultiStreamSequence) -> f64 {
    let mut denom = 0.0;
    for t in 1..seq.len() {
        for q in 0..seq.n_q {
            if seq.mask_at(t, q) {
                denom += seq.weight_at(t, q) as f64;
            }
        }
    }
    denom
}

fn log_softmax_pick<F: Real>(row: &[F], target: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        let v = v.to_f64();
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0f64;
    for &v in row {
        sum += (v.to_f64() - max).exp();
    }
    (row[target].to_f64() - max) - sum.ln()
}

/// Scalar weighted cross-entropy of one sequence. Errors when the mask holds
/// no supervised cells.
pub fn weighted_cross_entropy<F: Real>(
    logits: &Logits<F>,
    seq: &MultiStreamSequence,
) -> Result<CeOut> {
    let n_q = seq.n_q;
    let mut numer = 0.0;
    let mut denom = 0.0;
    let mut per_position = vec![0.0; seq.grid.len()];
    for (i, &t) in logits.rows.iter().enumerate() {
        let target_row = t + 1;
        if target_row >= seq.len() {
            continue;
        }
        for q in 0..n_q {
            if !seq.mask_at(target_row, q) {
                continue;
            }
            let target = seq.at(target_row, q) as usize;
            let nll = -log_softmax_pick(logits.per_stream[q].row(i), target);
            let w = seq.weight_at(target_row, q) as f64;
            per_position[target_row * n_q + q] = nll;
            numer += w * nll;
            denom += w;
        }
    }
    if denom == 0.0 {
        return Err(Error::Model(
            "loss mask selects no supervised cells".into(),
        ));
    }
    Ok(CeOut {
        loss: numer / denom,
        numer,
        denom,
        per_position,
    })
}

/// Gradient of `numer / denom` w.r.t. the selected logits, with `denom`
/// supplied by the caller so batches can share one normalizer.
pub fn cross_entropy_grad<F: Real>(
    logits: &Logits<F>,
    seq: &MultiStreamSequence,
    denom: f64,
) -> Logits<F> {
    let n_q = seq.n_q;
    let mut out = Vec::with_capacity(n_q);
    for q in 0..n_q {
        let src = &logits.per_stream[q];
        let mut dl = Mat::zeros(src.rows, src.cols);
        for (i, &t) in logits.rows.iter().enumerate() {
            let target_row = t + 1;
            if target_row >= seq.len() || !seq.mask_at(target_row, q) {
                continue;
            }
            let scale = seq.weight_at(target_row, q) as f64 / denom;
            let row = src.row(i);
            let mut max = f64::NEG_INFINITY;
            for &v in row {
                max = max.max(v.to_f64());
            }
            let mut sum = 0.0f64;
            for &v in row {
                sum += (v.to_f64() - max).exp();
            }
            let target = seq.at(target_row, q) as usize;
            let drow = dl.row_mut(i);
            for (j, &v) in row.iter().enumerate() {
                let p = (v.to_f64() - max).exp() / sum;
                let grad = scale * (p - f64::from(j == target));
                drow[j] = F::from_f64(grad);
            }
        }
        out.push(dl);
    }
    Logits {
        rows: logits.rows.clone(),
        per_stream: out,
    }
}
