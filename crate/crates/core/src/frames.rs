//! Frame matrices: the synthetic stand-in for audio.
//!
//! A frame matrix is `n_frames x feature_dim` of reals. On disk it is a text
//! file with a `n_frames feature_dim` header line followed by one row of
//! decimal numbers per frame.

use std::path::Path;

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(dim: usize) -> Self {
        FrameMatrix { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Tokenize("frame matrix contains non-finite entries".into()));
        }
        Ok(FrameMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.n_frames(), self.dim));
        for row in self.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                out.push_str(&format!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_if_changed(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::ParseLine {
            file: file.into(),
            line: 1,
            msg: "empty frame file".into(),
        })?;
        let mut it = header.split_whitespace();
        let parse_usize = |tok: Option<&str>, what: &str| -> Result<usize> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::ParseLine {
                file: file.into(),
                line: 1,
                msg: format!("bad header, expected `n_frames feature_dim`: missing {what}"),
            })
        };
        let n_frames = parse_usize(it.next(), "n_frames")?;
        let dim = parse_usize(it.next(), "feature_dim")?;
        let mut data = Vec::with_capacity(n_frames * dim);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::ParseLine {
                        file: file.into(),
                        line: idx + 1,
                        msg: format!("bad number {t:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::ParseLine {
                    file: file.into(),
                    line: idx + 1,
                    msg: format!("expected {dim} values, got {}", row.len()),
                });
            }
            data.extend_from_slice(&row);
        }
        if data.len() != n_frames * dim {
            return Err(Error::ParseLine {
                file: file.into(),
                line: 1,
                msg: format!(
                    "header declares {n_frames} frames but file holds {}",
                    data.len() / dim.max(1)
                ),
            });
        }
        FrameMatrix::from_rows(dim, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = util::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}
