//! The experiment configuration file: one TOML document drives prepare,
//! train, infer and eval. Unknown keys are rejected so typos fail loudly;
//! every random choice traces back to an explicit seed in this file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::decode::{DecodeParams, Strategy};
use crate::error::{Error, Result};
use crate::model::Interleave;
use crate::util;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub symbols: usize,
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Standard deviation of deterministic per-frame jitter; 0 keeps frames
    /// exactly on their symbol prototypes.
    #[serde(default)]
    pub frame_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum TokenizerConfig {
    Subword {
        name: String,
        vocab_size: u32,
        corpus: PathBuf,
        seed: u64,
    },
    Ssl {
        name: String,
        clusters: usize,
        corpus: PathBuf,
        seed: u64,
    },
    Codec {
        name: String,
        n_codebooks: usize,
        codebook_size: usize,
        corpus: PathBuf,
        seed: u64,
    },
    CodecSsl {
        name: String,
        ssl: String,
        codec: String,
    },
}

impl TokenizerConfig {
    pub fn name(&self) -> &str {
        match self {
            TokenizerConfig::Subword { name, .. }
            | TokenizerConfig::Ssl { name, .. }
            | TokenizerConfig::Codec { name, .. }
            | TokenizerConfig::CodecSsl { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub template: PathBuf,
    /// Dataset folder under `data_root`, holding train/valid/test subdirs.
    pub data: PathBuf,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub max_t: usize,
    pub interleave: Interleave,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    pub token_budget: usize,
    pub valid_every: u64,
    #[serde(default = "default_valid_max")]
    pub valid_max_examples: usize,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub seed: u64,
    pub loss_weights: BTreeMap<String, f64>,
}

fn default_clip() -> f64 {
    1.0
}

fn default_valid_max() -> usize {
    200
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSpec {
    pub strategy: String,
    #[serde(default)]
    pub beam_width: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    /// Absolute cap on generated rows; overrides max_len_ratio when set.
    #[serde(default)]
    pub max_len: Option<usize>,
    /// Cap as a multiple of the condition prefix length.
    #[serde(default)]
    pub max_len_ratio: Option<f64>,
    pub seed: u64,
}

fn default_min_len() -> usize {
    1
}

impl DecodeSpec {
    pub fn to_params(&self, prefix_rows: usize) -> Result<DecodeParams> {
        let strategy = match self.strategy.as_str() {
            "greedy" => Strategy::Greedy,
            "beam" => Strategy::Beam {
                width: self.beam_width.unwrap_or(4),
            },
            "top_k" => Strategy::TopK {
                k: self
                    .k
                    .ok_or_else(|| Error::Config("top_k strategy needs `k`".into()))?,
                temperature: self.temperature.unwrap_or(1.0),
            },
            "top_p" => Strategy::TopP {
                p: self
                    .p
                    .ok_or_else(|| Error::Config("top_p strategy needs `p`".into()))?,
                temperature: self.temperature.unwrap_or(1.0),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown decode strategy {other:?} (greedy, beam, top_k, top_p)"
                )))
            }
        };
        let max_len = match (self.max_len, self.max_len_ratio) {
            (Some(n), _) => n,
            (None, Some(r)) => ((prefix_rows as f64 * r).ceil() as usize).max(self.min_len + 2),
            (None, None) => (prefix_rows * 3).max(self.min_len + 2),
        };
        let dp = DecodeParams {
            strategy,
            min_len: self.min_len,
            max_len,
            seed: self.seed,
        };
        dp.validate()?;
        Ok(dp)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub data_root: PathBuf,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub tokenizers: Vec<TokenizerConfig>,
    pub tasks: Vec<TaskConfig>,
    pub model: ModelSection,
    pub training: TrainingSection,
    /// Per-task decode settings, keyed by task name.
    pub decode: BTreeMap<String, DecodeSpec>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.rebase(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Paths in the file are relative to the config file's directory.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.data_root);
        for t in &mut self.tokenizers {
            match t {
                TokenizerConfig::Subword { corpus, .. }
                | TokenizerConfig::Ssl { corpus, .. }
                | TokenizerConfig::Codec { corpus, .. } => fix(corpus),
                TokenizerConfig::CodecSsl { .. } => {}
            }
        }
        for t in &mut self.tasks {
            fix(&mut t.template);
        }
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = util::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks configured".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(&t.name) {
                return Err(Error::Config(format!("duplicate task '{}'", t.name)));
            }
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return Err(Error::Config(format!(
                    "task '{}' needs a positive weight",
                    t.name
                )));
            }
            if !self.decode.contains_key(&t.name) {
                return Err(Error::Config(format!(
                    "task '{}' has no [decode.{}] section",
                    t.name, t.name
                )));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tokenizers {
            if !names.insert(t.name().to_string()) {
                return Err(Error::Config(format!(
                    "duplicate tokenizer '{}'",
                    t.name()
                )));
            }
            if let TokenizerConfig::CodecSsl { name, ssl, codec } = t {
                for part in [ssl, codec] {
                    if !self.tokenizers.iter().any(|x| x.name() == part.as_str()) {
                        return Err(Error::Config(format!(
                            "codec_ssl '{name}' references unknown tokenizer '{part}'"
                        )));
                    }
                }
            }
        }
        for name in self.decode.keys() {
            if !self.tasks.iter().any(|t| &t.name == name) {
                return Err(Error::Config(format!(
                    "[decode.{name}] does not match any configured task"
                )));
            }
        }
        Ok(())
    }

    pub fn task(&self, name: &str) -> Result<&TaskConfig> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| {
                let known: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
                Error::Config(format!("unknown task '{name}'; configured tasks: {known:?}"))
            })
    }

    pub fn dataset_dir(&self, task: &TaskConfig, split: &str) -> PathBuf {
        self.data_root.join(&task.data).join(split)
    }
}
