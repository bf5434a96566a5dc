//! Tokenizer abstraction and the four desk-scale implementations: trainable
//! subword, pseudo-codec (residual vector quantization), pseudo-SSL (k-means
//! labels) and frame-wise codec+SSL fusion.

pub mod codec;
pub mod kmeans;
pub mod ssl;
pub mod subword;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameMatrix;
use crate::util;
use crate::vocab::{Modality, TokenizerSpec};

pub use codec::{codec_train, CodecModel};
pub use ssl::{ssl_train, SslModel};
pub use subword::{subword_decode, subword_encode, subword_train, SubwordModel};

/// Tokenized content: `tokens[t]` holds the local ids of all streams at
/// position t. k=1 for text/SSL, k=n_codebooks for codec, k=1+n_codebooks
/// for the fused codec+SSL tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedItem {
    pub tokenizer: String,
    pub tokens: Vec<Vec<u32>>,
}

impl TokenizedItem {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_streams(&self) -> usize {
        self.tokens.first().map_or(1, Vec::len)
    }
}

/// One stream of a tokenizer: the slice of its flat local id space the
/// stream draws from, and the name its loss weight is looked up under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSpec {
    pub local_range: Range<u32>,
    pub weight_key: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenizerKind {
    Subword(SubwordModel),
    Codec(CodecModel),
    Ssl(SslModel),
    CodecSsl {
        ssl_name: String,
        codec_name: String,
        ssl: SslModel,
        codec: CodecModel,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    pub name: String,
    pub kind: TokenizerKind,
}

impl Tokenizer {
    pub fn local_vocab_size(&self) -> u32 {
        match &self.kind {
            TokenizerKind::Subword(m) => m.vocab_size(),
            TokenizerKind::Codec(m) => m.local_vocab_size(),
            TokenizerKind::Ssl(m) => m.clusters as u32,
            TokenizerKind::CodecSsl { ssl, codec, .. } => {
                ssl.clusters as u32 + codec.local_vocab_size()
            }
        }
    }

    pub fn modality(&self) -> Modality {
        match &self.kind {
            TokenizerKind::Subword(_) => Modality::Text,
            _ => Modality::Audio,
        }
    }

    pub fn n_streams(&self) -> usize {
        match &self.kind {
            TokenizerKind::Subword(_) | TokenizerKind::Ssl(_) => 1,
            TokenizerKind::Codec(m) => m.n_codebooks,
            TokenizerKind::CodecSsl { codec, .. } => 1 + codec.n_codebooks,
        }
    }

    pub fn spec(&self) -> TokenizerSpec {
        TokenizerSpec {
            name: self.name.clone(),
            local_size: self.local_vocab_size(),
            modality: self.modality(),
        }
    }

    pub fn stream_specs(&self) -> Vec<StreamSpec> {
        match &self.kind {
            TokenizerKind::Subword(m) => vec![StreamSpec {
                local_range: 0..m.vocab_size(),
                weight_key: self.name.clone(),
            }],
            TokenizerKind::Ssl(m) => vec![StreamSpec {
                local_range: 0..m.clusters as u32,
                weight_key: self.name.clone(),
            }],
            TokenizerKind::Codec(m) => (0..m.n_codebooks)
                .map(|q| {
                    let lo = (q * m.codebook_size) as u32;
                    StreamSpec {
                        local_range: lo..lo + m.codebook_size as u32,
                        weight_key: self.name.clone(),
                    }
                })
                .collect(),
            TokenizerKind::CodecSsl {
                ssl_name,
                codec_name,
                ssl,
                codec,
            } => {
                let mut specs = vec![StreamSpec {
                    local_range: 0..ssl.clusters as u32,
                    weight_key: ssl_name.clone(),
                }];
                let base = ssl.clusters as u32;
                for q in 0..codec.n_codebooks {
                    let lo = base + (q * codec.codebook_size) as u32;
                    specs.push(StreamSpec {
                        local_range: lo..lo + codec.codebook_size as u32,
                        weight_key: codec_name.clone(),
                    });
                }
                specs
            }
        }
    }

    pub fn encode_text(&self, text: &str) -> Result<TokenizedItem> {
        match &self.kind {
            TokenizerKind::Subword(m) => Ok(TokenizedItem {
                tokenizer: self.name.clone(),
                tokens: subword::subword_encode(m, text)?
                    .into_iter()
                    .map(|id| vec![id])
                    .collect(),
            }),
            _ => Err(Error::Tokenize(format!(
                "tokenizer '{}' does not accept text",
                self.name
            ))),
        }
    }

    pub fn encode_frames(&self, frames: &FrameMatrix) -> Result<TokenizedItem> {
        let tokens = match &self.kind {
            TokenizerKind::Codec(m) => m.encode(frames)?,
            TokenizerKind::Ssl(m) => ssl::ssl_encode(m, frames)?
                .into_iter()
                .map(|l| vec![l])
                .collect(),
            TokenizerKind::CodecSsl { ssl, codec, .. } => {
                let labels = ssl::ssl_encode(ssl, frames)?;
                let codes = codec.encode(frames)?;
                let base = ssl.clusters as u32;
                labels
                    .into_iter()
                    .zip(codes)
                    .map(|(l, row)| {
                        let mut out = Vec::with_capacity(1 + row.len());
                        out.push(l);
                        out.extend(row.iter().map(|c| base + c));
                        out
                    })
                    .collect()
            }
            TokenizerKind::Subword(_) => {
                return Err(Error::Tokenize(format!(
                    "tokenizer '{}' does not accept frames",
                    self.name
                )))
            }
        };
        Ok(TokenizedItem {
            tokenizer: self.name.clone(),
            tokens,
        })
    }

    pub fn decode_text(&self, item: &TokenizedItem) -> Result<String> {
        match &self.kind {
            TokenizerKind::Subword(m) => {
                let flat: Vec<u32> = item.tokens.iter().map(|row| row[0]).collect();
                subword::subword_decode(m, &flat)
            }
            _ => Err(Error::Tokenize(format!(
                "tokenizer '{}' does not produce text",
                self.name
            ))),
        }
    }

    /// Frame reconstruction. For the fused tokenizer, the codec streams carry
    /// the reconstruction; SSL labels have no inverse and are ignored here.
    pub fn decode_frames(&self, item: &TokenizedItem) -> Result<FrameMatrix> {
        match &self.kind {
            TokenizerKind::Codec(m) => m.decode(&item.tokens),
            TokenizerKind::Ssl(m) => {
                let flat: Vec<u32> = item.tokens.iter().map(|row| row[0]).collect();
                ssl::ssl_decode(m, &flat)
            }
            TokenizerKind::CodecSsl { ssl, codec, .. } => {
                let base = ssl.clusters as u32;
                let codec_rows: Vec<Vec<u32>> = item
                    .tokens
                    .iter()
                    .map(|row| {
                        row[1..]
                            .iter()
                            .map(|&v| {
                                v.checked_sub(base).ok_or_else(|| {
                                    Error::Tokenize(format!(
                                        "id {v} is not a codec id of '{}'",
                                        self.name
                                    ))
                                })
                            })
                            .collect::<Result<Vec<u32>>>()
                    })
                    .collect::<Result<_>>()?;
                codec.decode(&codec_rows)
            }
            TokenizerKind::Subword(_) => Err(Error::Tokenize(format!(
                "tokenizer '{}' does not produce frames",
                self.name
            ))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.kind {
            TokenizerKind::Subword(m) => write_subword(&mut out, m),
            TokenizerKind::Codec(m) => write_codec(&mut out, m),
            TokenizerKind::Ssl(m) => write_ssl(&mut out, m),
            TokenizerKind::CodecSsl {
                ssl_name,
                codec_name,
                ssl,
                codec,
            } => {
                writeln!(out, "codec_ssl ssl={ssl_name} codec={codec_name}").unwrap();
                write_ssl(&mut out, ssl);
                write_codec(&mut out, codec);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_if_changed(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str, name: &str, file: &str) -> Result<Tokenizer> {
        let mut lines = Lines::new(text, file);
        let kind = parse_kind(&mut lines)?;
        lines.expect_end()?;
        Ok(Tokenizer {
            name: name.to_string(),
            kind,
        })
    }

    pub fn load(path: &Path, name: &str) -> Result<Tokenizer> {
        let text = util::read_to_string(path)?;
        Self::parse(&text, name, &path.display().to_string())
    }
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn unesc(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => {
                return Err(Error::Tokenize(format!(
                    "bad escape \\{} in tokenizer file",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

fn write_subword(out: &mut String, m: &SubwordModel) {
    writeln!(
        out,
        "subword base={} merges={} incomplete={} seed={}",
        m.base_symbols.len(),
        m.merges.len(),
        u8::from(m.incomplete),
        m.seed
    )
    .unwrap();
    for s in &m.base_symbols {
        writeln!(out, "sym {}", esc(s)).unwrap();
    }
    for (a, b) in &m.merges {
        writeln!(out, "merge {} {}", esc(a), esc(b)).unwrap();
    }
}

fn write_kmeans_rows(out: &mut String, km: &kmeans::KMeans) {
    for j in 0..km.k() {
        let row = km.centroid(j);
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
            first = false;
        }
        out.push('\n');
    }
}

fn write_codec(out: &mut String, m: &CodecModel) {
    writeln!(
        out,
        "codec n_codebooks={} codebook_size={} dim={} seed={}",
        m.n_codebooks, m.codebook_size, m.dim, m.seed
    )
    .unwrap();
    for stage in &m.stages {
        write_kmeans_rows(out, stage);
    }
}

fn write_ssl(out: &mut String, m: &SslModel) {
    writeln!(out, "ssl clusters={} dim={} seed={}", m.clusters, m.dim, m.seed).unwrap();
    write_kmeans_rows(out, &m.kmeans);
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    file: &'a str,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, file: &'a str) -> Self {
        Lines {
            iter: text.lines().enumerate(),
            file,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::ParseLine {
            file: self.file.into(),
            line,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.iter
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| self.err(0, "unexpected end of file"))
    }

    fn expect_end(&mut self) -> Result<()> {
        match self.iter.next() {
            None => Ok(()),
            Some((i, _)) => Err(self.err(i + 1, "trailing content")),
        }
    }
}

fn header_fields<'a>(
    lines: &Lines<'_>,
    lineno: usize,
    line: &'a str,
    expect_kind: &str,
) -> Result<BTreeMap<&'a str, &'a str>> {
    let mut it = line.split_whitespace();
    let kind = it.next().unwrap_or("");
    if kind != expect_kind {
        return Err(lines.err(lineno, format!("expected `{expect_kind}` header, got {kind:?}")));
    }
    let mut fields = BTreeMap::new();
    for tok in it {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| lines.err(lineno, format!("bad header field {tok:?}")))?;
        fields.insert(k, v);
    }
    Ok(fields)
}

fn field<T: std::str::FromStr>(
    lines: &Lines<'_>,
    lineno: usize,
    fields: &BTreeMap<&str, &str>,
    key: &str,
) -> Result<T> {
    fields
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| lines.err(lineno, format!("missing or bad header field `{key}`")))
}

fn parse_float_row(lines: &Lines<'_>, lineno: usize, line: &str, dim: usize) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| lines.err(lineno, format!("bad number {t:?}")))
        })
        .collect::<Result<_>>()?;
    if row.len() != dim {
        return Err(lines.err(lineno, format!("expected {dim} values, got {}", row.len())));
    }
    Ok(row)
}

fn parse_kmeans(lines: &mut Lines<'_>, k: usize, dim: usize) -> Result<kmeans::KMeans> {
    let mut centroids = Vec::with_capacity(k * dim);
    for _ in 0..k {
        let (no, line) = lines.next_line()?;
        centroids.extend(parse_float_row(lines, no, line, dim)?);
    }
    Ok(kmeans::KMeans { dim, centroids })
}

fn parse_ssl_section(lines: &mut Lines<'_>) -> Result<SslModel> {
    let (no, line) = lines.next_line()?;
    let fields = header_fields(lines, no, line, "ssl")?;
    let clusters: usize = field(lines, no, &fields, "clusters")?;
    let dim: usize = field(lines, no, &fields, "dim")?;
    let seed: u64 = field(lines, no, &fields, "seed")?;
    Ok(SslModel {
        clusters,
        dim,
        seed,
        kmeans: parse_kmeans(lines, clusters, dim)?,
    })
}

fn parse_codec_section(lines: &mut Lines<'_>) -> Result<CodecModel> {
    let (no, line) = lines.next_line()?;
    let fields = header_fields(lines, no, line, "codec")?;
    let n_codebooks: usize = field(lines, no, &fields, "n_codebooks")?;
    let codebook_size: usize = field(lines, no, &fields, "codebook_size")?;
    let dim: usize = field(lines, no, &fields, "dim")?;
    let seed: u64 = field(lines, no, &fields, "seed")?;
    let mut stages = Vec::with_capacity(n_codebooks);
    for _ in 0..n_codebooks {
        stages.push(parse_kmeans(lines, codebook_size, dim)?);
    }
    Ok(CodecModel {
        n_codebooks,
        codebook_size,
        dim,
        seed,
        stages,
    })
}

fn parse_kind(lines: &mut Lines<'_>) -> Result<TokenizerKind> {
    // Peek the first word of the first line to dispatch.
    let text_kind = {
        let mut probe = lines.iter.clone();
        let (_, line) = probe
            .next()
            .ok_or_else(|| lines.err(0, "empty tokenizer file"))?;
        line.split_whitespace().next().unwrap_or("").to_string()
    };
    match text_kind.as_str() {
        "subword" => {
            let (no, line) = lines.next_line()?;
            let fields = header_fields(lines, no, line, "subword")?;
            let n_base: usize = field(lines, no, &fields, "base")?;
            let n_merges: usize = field(lines, no, &fields, "merges")?;
            let incomplete: u8 = field(lines, no, &fields, "incomplete")?;
            let seed: u64 = field(lines, no, &fields, "seed")?;
            let mut base = Vec::with_capacity(n_base);
            for _ in 0..n_base {
                let (no, line) = lines.next_line()?;
                let rest = line
                    .strip_prefix("sym ")
                    .ok_or_else(|| lines.err(no, "expected `sym <symbol>`"))?;
                base.push(unesc(rest)?);
            }
            let mut merges = Vec::with_capacity(n_merges);
            for _ in 0..n_merges {
                let (no, line) = lines.next_line()?;
                let rest = line
                    .strip_prefix("merge ")
                    .ok_or_else(|| lines.err(no, "expected `merge <a> <b>`"))?;
                let (a, b) = rest
                    .split_once(' ')
                    .ok_or_else(|| lines.err(no, "expected two symbols"))?;
                merges.push((unesc(a)?, unesc(b)?));
            }
            Ok(TokenizerKind::Subword(SubwordModel::from_parts(
                base,
                merges,
                incomplete != 0,
                seed,
            )))
        }
        "ssl" => Ok(TokenizerKind::Ssl(parse_ssl_section(lines)?)),
        "codec" => Ok(TokenizerKind::Codec(parse_codec_section(lines)?)),
        "codec_ssl" => {
            let (no, line) = lines.next_line()?;
            let fields = header_fields(lines, no, line, "codec_ssl")?;
            let ssl_name: String = field(lines, no, &fields, "ssl")?;
            let codec_name: String = field(lines, no, &fields, "codec")?;
            let ssl = parse_ssl_section(lines)?;
            let codec = parse_codec_section(lines)?;
            if ssl.dim != codec.dim {
                return Err(lines.err(no, "ssl and codec feature dims differ"));
            }
            Ok(TokenizerKind::CodecSsl {
                ssl_name,
                codec_name,
                ssl,
                codec,
            })
        }
        other => Err(lines.err(1, format!("unknown tokenizer kind {other:?}"))),
    }
}

/// The set of trained tokenizers an experiment works with, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct TokenizerRegistry {
    list: Vec<Tokenizer>,
}

impl TokenizerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: Tokenizer) -> Result<()> {
        if self.list.iter().any(|x| x.name == t.name) {
            return Err(Error::DuplicateTokenizer(t.name));
        }
        self.list.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tokenizer> {
        self.list
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTokenizer(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.list.iter().any(|t| t.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tokenizer> {
        self.list.iter()
    }
}
