//! Pseudo-codec: residual vector quantization over frame features.
//!
//! Codebook q is k-means fit on the residual left after subtracting the
//! reconstructions of codebooks 0..q. Local ids are flat across streams:
//! `local = stream * codebook_size + code`, so the joint vocabulary sees a
//! single region per codec.

use crate::error::{Error, Result};
use crate::frames::FrameMatrix;
use crate::tokenizer::kmeans::KMeans;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub n_codebooks: usize,
    pub codebook_size: usize,
    pub dim: usize,
    pub seed: u64,
    /// One k-means per residual stage.
    pub stages: Vec<KMeans>,
}

pub fn codec_train(
    data: &FrameMatrix,
    n_codebooks: usize,
    codebook_size: usize,
    seed: u64,
) -> Result<CodecModel> {
    if data.n_frames() < codebook_size {
        return Err(Error::Tokenize(format!(
            "codec training needs at least {codebook_size} frames, got {}",
            data.n_frames()
        )));
    }
    let dim = data.dim();
    let mut residual: Vec<f64> = data.rows().flatten().copied().collect();
    let n = data.n_frames();
    let mut stages = Vec::with_capacity(n_codebooks);
    for q in 0..n_codebooks {
        let stage = KMeans::fit(&residual, dim, codebook_size, seed.wrapping_add(q as u64));
        for i in 0..n {
            let code = stage.assign(&residual[i * dim..(i + 1) * dim]);
            let c = stage.centroid(code).to_vec();
            for (r, cv) in residual[i * dim..(i + 1) * dim].iter_mut().zip(&c) {
                *r -= cv;
            }
        }
        stages.push(stage);
    }
    Ok(CodecModel {
        n_codebooks,
        codebook_size,
        dim,
        seed,
        stages,
    })
}

impl CodecModel {
    pub fn local_vocab_size(&self) -> u32 {
        (self.n_codebooks * self.codebook_size) as u32
    }

    /// Greedy residual quantization. Row t of the result holds the flat
    /// local ids of all `n_codebooks` streams for frame t.
    pub fn encode(&self, frames: &FrameMatrix) -> Result<Vec<Vec<u32>>> {
        if frames.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: frames.dim(),
            });
        }
        let mut out = Vec::with_capacity(frames.n_frames());
        for row in frames.rows() {
            let mut residual = row.to_vec();
            let mut codes = Vec::with_capacity(self.n_codebooks);
            for (q, stage) in self.stages.iter().enumerate() {
                let code = stage.assign(&residual);
                for (r, c) in residual.iter_mut().zip(stage.centroid(code)) {
                    *r -= c;
                }
                codes.push((q * self.codebook_size + code) as u32);
            }
            out.push(codes);
        }
        Ok(out)
    }

    /// Sums the selected centroids per frame.
    pub fn decode(&self, tokens: &[Vec<u32>]) -> Result<FrameMatrix> {
        let mut m = FrameMatrix::new(self.dim);
        for (t, row) in tokens.iter().enumerate() {
            if row.len() != self.n_codebooks {
                return Err(Error::Tokenize(format!(
                    "codec frame {t} has {} streams, expected {}",
                    row.len(),
                    self.n_codebooks
                )));
            }
            let mut frame = vec![0.0; self.dim];
            for (q, &local) in row.iter().enumerate() {
                let (stream, code) = self.split_local(local)?;
                if stream != q {
                    return Err(Error::Tokenize(format!(
                        "codec frame {t}: id {local} belongs to stream {stream}, found in stream {q}"
                    )));
                }
                for (f, c) in frame.iter_mut().zip(self.stages[stream].centroid(code)) {
                    *f += c;
                }
            }
            m.push_row(&frame);
        }
        Ok(m)
    }

    /// Flat local id -> (stream, code).
    pub fn split_local(&self, local: u32) -> Result<(usize, usize)> {
        if local >= self.local_vocab_size() {
            return Err(Error::LocalIdOutOfRange {
                tokenizer: "codec".into(),
                local,
                size: self.local_vocab_size(),
            });
        }
        let local = local as usize;
        Ok((local / self.codebook_size, local % self.codebook_size))
    }

    pub fn reconstruction_error(&self, frames: &FrameMatrix) -> Result<f64> {
        let codes = self.encode(frames)?;
        let recon = self.decode(&codes)?;
        let mut err = 0.0;
        for (a, b) in frames.rows().zip(recon.rows()) {
            err += a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        Ok(err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_frames() -> FrameMatrix {
        let mut rows = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                rows.extend_from_slice(&[i as f64 * 10.0, j as f64 * 10.0]);
            }
        }
        FrameMatrix::from_rows(2, rows).unwrap()
    }

    #[test]
    fn distinct_frames_fit_exactly() {
        let data = grid_frames(); // 16 distinct frames
        let m = codec_train(&data, 1, 16, 3).unwrap();
        assert_eq!(m.reconstruction_error(&data).unwrap(), 0.0);
    }

    #[test]
    fn more_codebooks_never_hurt() {
        let mut rows = Vec::new();
        for i in 0..40 {
            rows.extend_from_slice(&[(i % 7) as f64 + 0.1 * i as f64, ((i * 3) % 5) as f64]);
        }
        let data = FrameMatrix::from_rows(2, rows).unwrap();
        let one = codec_train(&data, 1, 4, 9).unwrap();
        let two = codec_train(&data, 2, 4, 9).unwrap();
        // Stage 0 is shared (same seed), stage 1 only subtracts more.
        assert_eq!(one.stages[0], two.stages[0]);
        assert!(
            two.reconstruction_error(&data).unwrap()
                <= one.reconstruction_error(&data).unwrap() + 1e-12
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let data = grid_frames();
        let a = codec_train(&data, 2, 4, 5).unwrap();
        let b = codec_train(&data, 2, 4, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn centroid_frame_is_a_fixed_point() {
        let data = grid_frames();
        let m = codec_train(&data, 1, 16, 3).unwrap();
        let frame = FrameMatrix::from_rows(2, m.stages[0].centroid(5).to_vec()).unwrap();
        let codes = m.encode(&frame).unwrap();
        let recon = m.decode(&codes).unwrap();
        assert_eq!(recon.row(0), frame.row(0));
    }

    #[test]
    fn encode_decode_encode_is_idempotent() {
        let data = grid_frames();
        let m = codec_train(&data, 2, 4, 11).unwrap();
        let codes = m.encode(&data).unwrap();
        let recon = m.decode(&codes).unwrap();
        let codes2 = m.encode(&recon).unwrap();
        assert_eq!(codes, codes2);
    }

    #[test]
    fn shape_contract() {
        let data = grid_frames();
        let m = codec_train(&data, 2, 4, 11).unwrap();
        let frames = FrameMatrix::from_rows(2, vec![0.0, 0.0, 10.0, 10.0, 20.0, 30.0]).unwrap();
        let codes = m.encode(&frames).unwrap();
        assert_eq!(codes.len(), 3);
        assert!(codes.iter().all(|row| row.len() == 2));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = codec_train(&grid_frames(), 1, 4, 2).unwrap();
        let bad = FrameMatrix::from_rows(3, vec![0.0, 0.0, 0.0]).unwrap();
        assert!(m.encode(&bad).is_err());
    }

    #[test]
    fn too_few_frames_rejected() {
        let tiny = FrameMatrix::from_rows(2, vec![0.0, 0.0]).unwrap();
        assert!(codec_train(&tiny, 1, 4, 0).is_err());
    }
}
