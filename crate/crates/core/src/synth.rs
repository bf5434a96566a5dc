//! Synthetic corpus: utterances whose frame sequences are deterministic
//! functions of latent symbol strings. Four toy task datasets (asr, tts,
//! textlm, audiolm) share one symbol inventory and prototype table.

use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SynthSpec;
use crate::error::{Error, Result};
use crate::frames::FrameMatrix;
use crate::index::{IndexEntry, IndexFile};
use crate::model::real::gauss;
use crate::util;

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(b.wrapping_mul(0xff51afd7ed558ccd));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Symbol prototypes: one well-separated point per symbol.
pub fn prototypes(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 1, 0));
    (0..spec.symbols)
        .map(|_| (0..spec.feature_dim).map(|_| gauss(&mut rng)).collect())
        .collect()
}

fn symbol_char(i: usize) -> char {
    (b'a' + i as u8) as char
}

struct Utterance {
    id: String,
    text: String,
    frames: FrameMatrix,
}

fn make_utterance(
    spec: &SynthSpec,
    protos: &[Vec<f64>],
    stream: u64,
    index: usize,
) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, stream, index as u64));
    let len = spec.min_len
        + (rng.next_u64() as usize) % (spec.max_len - spec.min_len + 1);
    let mut text = String::with_capacity(len);
    let mut frames = FrameMatrix::new(spec.feature_dim);
    for _ in 0..len {
        let s = (rng.next_u64() as usize) % spec.symbols;
        text.push(symbol_char(s));
        let mut frame = protos[s].clone();
        if spec.frame_noise > 0.0 {
            for v in &mut frame {
                *v += spec.frame_noise * gauss(&mut rng);
            }
        }
        frames.push_row(&frame);
    }
    Utterance {
        id: format!("utt{index:05}"),
        text,
        frames,
    }
}

fn split_sizes(spec: &SynthSpec) -> [(usize, &'static str); 3] {
    [
        (spec.n_train, "train"),
        (spec.n_valid, "valid"),
        (spec.n_test, "test"),
    ]
}

fn write_task(
    root: &Path,
    task: &str,
    spec: &SynthSpec,
    protos: &[Vec<f64>],
    stream_base: u64,
) -> Result<()> {
    for (split_idx, (count, split)) in split_sizes(spec).iter().enumerate() {
        let dir = root.join(task).join(split);
        let frames_dir = dir.join("frames");
        let stream = mix(stream_base, split_idx as u64, 0);
        let mut indexes: Vec<IndexFile> = match task {
            "asr" => vec![IndexFile::new("wav"), IndexFile::new("text")],
            "tts" => vec![IndexFile::new("text"), IndexFile::new("wav")],
            "textlm" => vec![IndexFile::new("prompt"), IndexFile::new("cont")],
            "audiolm" => vec![IndexFile::new("wav_prompt"), IndexFile::new("wav_cont")],
            other => return Err(Error::Config(format!("unknown synth task '{other}'"))),
        };
        for i in 0..*count {
            let utt = make_utterance(spec, protos, stream, i);
            match task {
                "asr" | "tts" => {
                    let rel = format!("frames/{}.fm", utt.id);
                    utt.frames.save(&frames_dir.join(format!("{}.fm", utt.id)))?;
                    for file in &mut indexes {
                        let content = if file.item_name == "wav" {
                            rel.clone()
                        } else {
                            utt.text.clone()
                        };
                        file.entries.push(IndexEntry {
                            example_id: utt.id.clone(),
                            content,
                        });
                    }
                }
                "textlm" => {
                    let cut = 2.min(utt.text.len() - 1);
                    indexes[0].entries.push(IndexEntry {
                        example_id: utt.id.clone(),
                        content: utt.text[..cut].to_string(),
                    });
                    indexes[1].entries.push(IndexEntry {
                        example_id: utt.id.clone(),
                        content: utt.text[cut..].to_string(),
                    });
                }
                "audiolm" => {
                    let cut = 2.min(utt.frames.n_frames() - 1);
                    let mut head = FrameMatrix::new(spec.feature_dim);
                    let mut tail = FrameMatrix::new(spec.feature_dim);
                    for t in 0..utt.frames.n_frames() {
                        if t < cut {
                            head.push_row(utt.frames.row(t));
                        } else {
                            tail.push_row(utt.frames.row(t));
                        }
                    }
                    head.save(&frames_dir.join(format!("{}.head.fm", utt.id)))?;
                    tail.save(&frames_dir.join(format!("{}.tail.fm", utt.id)))?;
                    indexes[0].entries.push(IndexEntry {
                        example_id: utt.id.clone(),
                        content: format!("frames/{}.head.fm", utt.id),
                    });
                    indexes[1].entries.push(IndexEntry {
                        example_id: utt.id.clone(),
                        content: format!("frames/{}.tail.fm", utt.id),
                    });
                }
                _ => unreachable!(),
            }
        }
        for file in &indexes {
            file.save(&dir.join(&file.item_name))?;
        }
    }
    Ok(())
}

/// Tokenizer training corpora: text lines covering the symbol inventory and
/// a frame pile covering every prototype (with jitter when configured).
fn write_corpora(root: &Path, spec: &SynthSpec, protos: &[Vec<f64>]) -> Result<()> {
    let dir = root.join("corpora");
    let mut text = String::new();
    let mut frames = FrameMatrix::new(spec.feature_dim);
    let n_lines = 200.max(spec.symbols * 8);
    for i in 0..n_lines {
        let utt = make_utterance(spec, protos, mix(spec.seed, 99, 0), i);
        text.push_str(&utt.text);
        text.push('\n');
        if frames.n_frames() < spec.symbols * 24 {
            for t in 0..utt.frames.n_frames() {
                frames.push_row(utt.frames.row(t));
            }
        }
    }
    util::write_if_changed(&dir.join("text.txt"), text.as_bytes())?;
    frames.save(&dir.join("frames.fm"))?;
    Ok(())
}

/// Emits the full toy corpus for all four tasks under `root`.
pub fn synthesize(root: &Path, spec: &SynthSpec) -> Result<()> {
    if spec.symbols == 0 || spec.symbols > 26 {
        return Err(Error::Config("synth symbols must be in 1..=26".into()));
    }
    if spec.min_len < 2 || spec.max_len < spec.min_len {
        return Err(Error::Config(
            "synth needs 2 <= min_len <= max_len".into(),
        ));
    }
    let protos = prototypes(spec);
    write_corpora(root, spec, &protos)?;
    for (i, task) in ["asr", "tts", "textlm", "audiolm"].iter().enumerate() {
        write_task(root, task, spec, &protos, mix(spec.seed, 7, i as u64))?;
    }
    Ok(())
}
