//! Checkpoint files: a text directory (config echo, step, named tensor
//! shapes, sampler position) followed by one raw little-endian f32 blob
//! holding parameters and both optimizer moments. Restoring is bit-exact,
//! so a resumed run continues identically to an uninterrupted one.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::SamplerSnapshot;
use crate::model::optim::TrainState;
use crate::model::transformer::Params;
use crate::model::ModelConfig;

const MAGIC: &str = "speechlm-checkpoint v1";

pub fn save_checkpoint(
    path: &Path,
    state: &TrainState<f32>,
    sampler: Option<&SamplerSnapshot>,
) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("step {}\n", state.step));
    let cfg_json = serde_json::to_string(&state.cfg).expect("config json");
    header.push_str(&format!("config {cfg_json}\n"));
    if let Some(s) = sampler {
        let s_json = serde_json::to_string(s).expect("sampler json");
        header.push_str(&format!("sampler {s_json}\n"));
    }
    let tensors = state.params.visit();
    let mut count = 0usize;
    for (name, m) in &tensors {
        header.push_str(&format!("tensor {name} {} {}\n", m.rows, m.cols));
        count += m.data.len();
    }
    header.push_str(&format!("binary {count}\n"));

    let mut bytes = header.into_bytes();
    bytes.reserve(3 * count * 4);
    for part in [&state.params, &state.m, &state.v] {
        for (_, m) in part.visit() {
            for v in &m.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState<f32>, Option<SamplerSnapshot>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));

    let mut offset = 0usize;
    let mut next_line = |bytes: &[u8]| -> Result<String> {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| bad("non-utf8 header"))?
            .to_string();
        offset += end + 1;
        Ok(line)
    };

    if next_line(&bytes)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let step: u64 = next_line(&bytes)?
        .strip_prefix("step ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad step line"))?;
    let cfg: ModelConfig = {
        let line = next_line(&bytes)?;
        let json = line.strip_prefix("config ").ok_or_else(|| bad("bad config line"))?;
        serde_json::from_str(json).map_err(|e| bad(&format!("bad config json: {e}")))?
    };
    cfg.validate()?;

    let mut sampler = None;
    let mut tensor_lines: Vec<(String, usize, usize)> = Vec::new();
    let declared_count;
    loop {
        let line = next_line(&bytes)?;
        if let Some(json) = line.strip_prefix("sampler ") {
            sampler =
                Some(serde_json::from_str(json).map_err(|e| bad(&format!("bad sampler json: {e}")))?);
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let mut it = rest.split_whitespace();
            let (Some(name), Some(r), Some(c), None) = (it.next(), it.next(), it.next(), it.next())
            else {
                return Err(bad("bad tensor line"));
            };
            let rows = r.parse().map_err(|_| bad("bad tensor rows"))?;
            let cols = c.parse().map_err(|_| bad("bad tensor cols"))?;
            tensor_lines.push((name.to_string(), rows, cols));
        } else if let Some(n) = line.strip_prefix("binary ") {
            declared_count = n.parse::<usize>().map_err(|_| bad("bad binary count"))?;
            break;
        } else {
            return Err(bad(&format!("unexpected header line {line:?}")));
        }
    }

    let mut state = TrainState {
        params: Params::zeros(&cfg),
        m: Params::zeros(&cfg),
        v: Params::zeros(&cfg),
        cfg,
        step,
    };
    let expected: Vec<(String, usize, usize)> = state
        .params
        .visit()
        .into_iter()
        .map(|(n, m)| (n, m.rows, m.cols))
        .collect();
    if tensor_lines != expected {
        return Err(bad("tensor directory does not match the model config"));
    }
    let count: usize = expected.iter().map(|(_, r, c)| r * c).sum();
    if declared_count != count {
        return Err(bad("binary count does not match tensor shapes"));
    }
    if bytes.len() - offset != 3 * count * 4 {
        return Err(bad("binary payload has the wrong size"));
    }
    let mut cursor = offset;
    for part in [&mut state.params, &mut state.m, &mut state.v] {
        for (_, m) in part.visit_mut() {
            for v in &mut m.data {
                *v = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
                cursor += 4;
            }
        }
    }
    Ok((state, sampler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interleave;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ff_mult: 2,
            n_q: 2,
            vocab_size: 10,
            max_t: 6,
            interleave: Interleave::Parallel,
            seed: 4,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ck/model.ckpt");
        let mut state = TrainState::<f32>::new(cfg()).unwrap();
        state.step = 17;
        state.m.visit_mut()[0].1.data[0] = 0.25;
        let snap = SamplerSnapshot {
            choice_word_pos: 12345,
            passes: vec![2],
            cursors: vec![3],
            pending: Some((0, 1)),
        };
        save_checkpoint(&path, &state, Some(&snap)).unwrap();
        let (back, snap2) = load_checkpoint(&path).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(snap2, Some(snap));
        for ((_, a), (_, b)) in state.params.visit().into_iter().zip(back.params.visit()) {
            assert_eq!(a.data, b.data);
        }
        for ((_, a), (_, b)) in state.m.visit().into_iter().zip(back.m.visit()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("x.ckpt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
