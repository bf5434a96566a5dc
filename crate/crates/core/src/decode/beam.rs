//! Beam search over stream 0, other streams decoded greedily per
//! hypothesis. Scores are length-normalized sums of stream-0
//! log-probabilities; ties break by earlier finish, then by lexicographic
//! stream-0 token order.

use std::cmp::Ordering;

use crate::decode::{
    apply_step, mask_to_candidates, outcome_from_session, step_logits, step_mask, Chooser,
    GenCtx, GenerateOutcome, Session, Strategy,
};
use crate::error::Result;
use crate::model::real::Real;

fn stream0_tokens(sess: &Session) -> Vec<u32> {
    sess.rows.iter().map(|r| r[0]).collect()
}

/// Ranking: higher normalized score first, then fewer generated rows, then
/// lexicographically smaller stream-0 sequence.
fn rank(a: &Session, b: &Session) -> Ordering {
    b.norm_score()
        .partial_cmp(&a.norm_score())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.len().cmp(&b.len()))
        .then_with(|| stream0_tokens(a).cmp(&stream0_tokens(b)))
}

pub(crate) fn beam_generate<F: Real>(ctx: &GenCtx<'_, F>, width: usize) -> Result<GenerateOutcome> {
    let mut greedy = Chooser::new(Strategy::Greedy, 0);
    let mut live = vec![Session::new(ctx)];
    let mut finished: Vec<Session> = Vec::new();

    while !live.is_empty() {
        // Branching extensions compete for the beam width; delay-mode
        // trailing continuations are deterministic and keep their slot.
        let mut extensions: Vec<Session> = Vec::new();
        let mut carried: Vec<Session> = Vec::new();
        for sess in live {
            if sess.done {
                finished.push(sess);
                continue;
            }
            let logits = step_logits(&sess, ctx)?;
            let branching = !sess.state.finished() && sess.len() < ctx.max_len;
            if branching {
                let mask =
                    step_mask(&sess.state, ctx.template, ctx.vocab, ctx.registry, ctx.min_len)?;
                for tok in mask_to_candidates(&mask) {
                    let mut ext = sess.clone();
                    apply_step(&mut ext, ctx, &mut greedy, &logits, Some(tok))?;
                    extensions.push(ext);
                }
            } else {
                let mut ext = sess;
                apply_step(&mut ext, ctx, &mut greedy, &logits, None)?;
                if ext.done {
                    finished.push(ext);
                } else {
                    carried.push(ext);
                }
            }
        }
        extensions.sort_by(rank);
        extensions.truncate(width);
        live = carried;
        for ext in extensions {
            if ext.done {
                finished.push(ext);
            } else {
                live.push(ext);
            }
        }
    }

    finished.sort_by(rank);
    let complete: Vec<&Session> = finished.iter().filter(|s| s.complete).collect();
    let best = match complete.first() {
        Some(s) => (*s).clone(),
        // No hypothesis reached Eos within max_len: best unfinished, flagged.
        None => finished
            .first()
            .cloned()
            .ok_or_else(|| crate::error::Error::Decode("beam produced no hypotheses".into()))?,
    };
    outcome_from_session(&best, ctx)
}
