//! Delay interleaving: stream q is shifted down by q rows so streams are
//! predicted with staggered context. Vacated cells hold DelayPad and never
//! carry loss.

use crate::error::{Error, Result};
use crate::sequence::MultiStreamSequence;
use crate::vocab::DELAY_PAD;

/// T x n_q -> (T + n_q - 1) x n_q, stream q shifted down by q.
pub fn delay_apply(seq: &MultiStreamSequence) -> MultiStreamSequence {
    let n_q = seq.n_q;
    let t_in = seq.len();
    if n_q == 1 {
        return seq.clone();
    }
    let t_out = t_in + n_q - 1;
    let mut grid = vec![DELAY_PAD; t_out * n_q];
    let mut mask = vec![false; t_out * n_q];
    let mut weights = vec![0.0f32; t_out * n_q];
    for t in 0..t_in {
        for q in 0..n_q {
            let dst = (t + q) * n_q + q;
            grid[dst] = seq.at(t, q);
            mask[dst] = seq.mask_at(t, q);
            weights[dst] = seq.weight_at(t, q);
        }
    }
    MultiStreamSequence {
        n_q,
        grid,
        mask,
        weights,
        spans: seq.spans.clone(),
    }
}

/// Exact inverse of [`delay_apply`].
pub fn delay_invert(seq: &MultiStreamSequence) -> Result<MultiStreamSequence> {
    let n_q = seq.n_q;
    if n_q == 1 {
        return Ok(seq.clone());
    }
    let t_out = seq.len();
    if t_out < n_q {
        return Err(Error::Model(format!(
            "delayed grid of {t_out} rows cannot hold {n_q} streams"
        )));
    }
    let t_in = t_out - (n_q - 1);
    let mut grid = vec![0u32; t_in * n_q];
    let mut mask = vec![false; t_in * n_q];
    let mut weights = vec![0.0f32; t_in * n_q];
    for t in 0..t_in {
        for q in 0..n_q {
            let src = (t + q) * n_q + q;
            grid[t * n_q + q] = seq.grid[src];
            mask[t * n_q + q] = seq.mask[src];
            weights[t * n_q + q] = seq.weights[src];
        }
    }
    Ok(MultiStreamSequence {
        n_q,
        grid,
        mask,
        weights,
        spans: seq.spans.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(n_q: usize, grid: Vec<u32>) -> MultiStreamSequence {
        let n = grid.len();
        MultiStreamSequence {
            n_q,
            grid,
            mask: vec![false; n],
            weights: vec![0.0; n],
            spans: vec![],
        }
    }

    #[test]
    fn single_stream_is_identity() {
        let s = seq(1, vec![5, 6, 7]);
        assert_eq!(delay_apply(&s), s);
        assert_eq!(delay_invert(&s).unwrap(), s);
    }

    #[test]
    fn two_by_three_shift_pattern() {
        // [[a,b,c],[d,e,f]] -> [[a,P,P],[d,b,P],[P,e,c],[P,P,f]]
        let (a, b, c, d, e, f) = (10, 11, 12, 13, 14, 15);
        let s = seq(3, vec![a, b, c, d, e, f]);
        let delayed = delay_apply(&s);
        let p = DELAY_PAD;
        assert_eq!(delayed.len(), 4);
        assert_eq!(delayed.grid, vec![a, p, p, d, b, p, p, e, c, p, p, f]);
    }

    #[test]
    fn roundtrip_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let n_q = rng.random_range(1..=9usize);
            let t = rng.random_range(1..=32usize);
            let mut s = seq(n_q, (0..t * n_q).map(|_| rng.random_range(0..100u32)).collect());
            for i in 0..t * n_q {
                s.mask[i] = rng.random_range(0..2u8) == 1;
                s.weights[i] = if s.mask[i] { rng.random_range(0.0..2.0f32) } else { 0.0 };
            }
            let back = delay_invert(&delay_apply(&s)).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn delayed_cells_carry_no_loss() {
        let mut s = seq(3, (10..22).collect());
        s.mask.fill(true);
        s.weights.fill(1.0);
        let d = delay_apply(&s);
        for t in 0..d.len() {
            for q in 0..d.n_q {
                if d.at(t, q) == DELAY_PAD {
                    assert!(!d.mask_at(t, q));
                    assert_eq!(d.weight_at(t, q), 0.0);
                }
            }
        }
    }
}
