//! The four workflow stages behind the CLI: prepare, train, infer, eval.
//! Every stage is a library function so tests can drive the pipeline
//! end to end without spawning processes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, TaskConfig, TokenizerConfig};
use crate::decode::generate;
use crate::error::{Error, Result};
use crate::eval::{edit_distance_wer, frame_mse, perplexity, EvalReport, EvalUnit, ExampleRecord};
use crate::frames::FrameMatrix;
use crate::fusion::{fuse, AssembleContext, BatchSampler, FusedDataset, FusionSource};
use crate::index::{IndexEntry, IndexFile};
use crate::manifest::{DatasetManifest, FileRef};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::optim::{eval_loss, train_step, OptimConfig, TrainState};
use crate::model::transformer::max_input_rows;
use crate::model::ModelConfig;
use crate::preprocess::{detect_and_build_vocab, scan_dataset_folder, tokenize_dataset};
use crate::sequence::{assemble_sequence, compute_token_weights, MultiStreamSequence};
use crate::synth::synthesize;
use crate::template::TaskTemplate;
use crate::tokenizer::{
    codec_train, ssl_train, subword_train, Tokenizer, TokenizerKind, TokenizerRegistry,
};
use crate::util;
use crate::vocab::{Modality, Vocabulary};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub fn tokenizer_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join("tokenizers").join(format!("{name}.tok"))
}

pub fn vocab_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("vocab.txt")
}

pub fn manifest_path(cfg: &ExperimentConfig, task: &str, split: &str) -> PathBuf {
    cfg.out_dir.join("manifests").join(format!("{task}.{split}.json"))
}

pub fn checkpoint_path(cfg: &ExperimentConfig, which: &str) -> PathBuf {
    cfg.out_dir.join("checkpoints").join(format!("{which}.ckpt"))
}

pub fn infer_dir(cfg: &ExperimentConfig, task: &str, split: &str) -> PathBuf {
    cfg.out_dir.join("infer").join(task).join(split)
}

fn rel_file_ref(path: &Path, base: &Path) -> Result<FileRef> {
    let rel = path.strip_prefix(base).unwrap_or(path);
    Ok(FileRef {
        path: rel.display().to_string(),
        sha256: util::sha256_file(path)?,
    })
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("[{name}] {e}")))
}

/// Trains (or loads, when the file already exists) every configured
/// tokenizer, in declaration order. Fused tokenizers compose components
/// declared earlier in the file.
pub fn ensure_tokenizers(cfg: &ExperimentConfig, train_missing: bool) -> Result<TokenizerRegistry> {
    let mut registry = TokenizerRegistry::new();
    for tc in &cfg.tokenizers {
        let path = tokenizer_path(cfg, tc.name());
        let tokenizer = if path.is_file() {
            Tokenizer::load(&path, tc.name())?
        } else if !train_missing {
            return Err(Error::Config(format!(
                "tokenizer file {} is missing; run prepare first",
                path.display()
            )));
        } else {
            let t = train_tokenizer(tc, &registry)?;
            t.save(&path)?;
            t
        };
        registry.insert(tokenizer)?;
    }
    Ok(registry)
}

fn train_tokenizer(tc: &TokenizerConfig, registry: &TokenizerRegistry) -> Result<Tokenizer> {
    let kind = match tc {
        TokenizerConfig::Subword {
            vocab_size,
            corpus,
            seed,
            ..
        } => {
            let text = util::read_to_string(corpus)?;
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            TokenizerKind::Subword(subword_train(&lines, *vocab_size, *seed)?)
        }
        TokenizerConfig::Ssl {
            clusters,
            corpus,
            seed,
            ..
        } => TokenizerKind::Ssl(ssl_train(&FrameMatrix::load(corpus)?, *clusters, *seed)?),
        TokenizerConfig::Codec {
            n_codebooks,
            codebook_size,
            corpus,
            seed,
            ..
        } => TokenizerKind::Codec(codec_train(
            &FrameMatrix::load(corpus)?,
            *n_codebooks,
            *codebook_size,
            *seed,
        )?),
        TokenizerConfig::CodecSsl { name, ssl, codec } => {
            let ssl_tok = registry.get(ssl).map_err(|_| {
                Error::Config(format!(
                    "codec_ssl '{name}' needs '{ssl}' declared before it"
                ))
            })?;
            let codec_tok = registry.get(codec).map_err(|_| {
                Error::Config(format!(
                    "codec_ssl '{name}' needs '{codec}' declared before it"
                ))
            })?;
            let TokenizerKind::Ssl(ssl_model) = &ssl_tok.kind else {
                return Err(Error::Config(format!("'{ssl}' is not an ssl tokenizer")));
            };
            let TokenizerKind::Codec(codec_model) = &codec_tok.kind else {
                return Err(Error::Config(format!("'{codec}' is not a codec tokenizer")));
            };
            TokenizerKind::CodecSsl {
                ssl_name: ssl.clone(),
                codec_name: codec.clone(),
                ssl: ssl_model.clone(),
                codec: codec_model.clone(),
            }
        }
    };
    Ok(Tokenizer {
        name: tc.name().to_string(),
        kind,
    })
}

pub fn load_templates(cfg: &ExperimentConfig) -> Result<Vec<(TaskConfig, TaskTemplate)>> {
    let mut out = Vec::new();
    for task in &cfg.tasks {
        let template = TaskTemplate::load(&task.template)?;
        if template.task_name != task.name {
            return Err(Error::Config(format!(
                "template {} declares task '{}' but the config calls it '{}'",
                task.template.display(),
                template.task_name,
                task.name
            )));
        }
        out.push((task.clone(), template));
    }
    Ok(out)
}

/// n_q is the widest stream count among the tokenizers the templates use.
pub fn derive_n_q(
    registry: &TokenizerRegistry,
    templates: &[(TaskConfig, TaskTemplate)],
) -> Result<usize> {
    let mut n_q = 1;
    for (_, template) in templates {
        for name in template.tokenizers_in_order() {
            n_q = n_q.max(registry.get(&name)?.n_streams());
        }
    }
    Ok(n_q)
}

pub struct Runtime {
    pub registry: TokenizerRegistry,
    pub templates: Vec<(TaskConfig, TaskTemplate)>,
    pub vocab: Vocabulary,
    pub vocab_sha256: String,
    pub n_q: usize,
}

fn load_runtime(cfg: &ExperimentConfig) -> Result<Runtime> {
    let registry = ensure_tokenizers(cfg, false)?;
    let templates = load_templates(cfg)?;
    let vpath = vocab_path(cfg);
    if !vpath.is_file() {
        return Err(Error::Config(format!(
            "vocabulary {} is missing; run prepare first",
            vpath.display()
        )));
    }
    let vocab = Vocabulary::load(&vpath)?;
    let vocab_sha256 = util::sha256_file(&vpath)?;
    let n_q = derive_n_q(&registry, &templates)?;
    Ok(Runtime {
        registry,
        templates,
        vocab,
        vocab_sha256,
        n_q,
    })
}

impl Runtime {
    pub fn template(&self, task: &str) -> Result<&TaskTemplate> {
        self.templates
            .iter()
            .find(|(tc, _)| tc.name == task)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownTask(task.into()))
    }

    fn model_config(&self, cfg: &ExperimentConfig) -> Result<ModelConfig> {
        let m = &cfg.model;
        let mc = ModelConfig {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            ff_mult: m.ff_mult,
            n_q: self.n_q,
            vocab_size: self.vocab.total_size() as usize,
            max_t: m.max_t,
            interleave: m.interleave,
            seed: m.seed,
        };
        mc.validate()?;
        Ok(mc)
    }
}

#[derive(Debug, Default)]
pub struct PrepareReport {
    pub written: Vec<PathBuf>,
    pub unchanged: Vec<PathBuf>,
    pub id_mismatches: usize,
    pub rejects: usize,
}

/// Prepare: optional corpus synthesis, tokenizer training, joint vocabulary
/// construction, offline tokenization into one manifest per (task, split).
/// Reruns over unchanged inputs rewrite nothing.
pub fn cmd_prepare(cfg: &ExperimentConfig, synthesize_data: bool) -> Result<PrepareReport> {
    let mut report = PrepareReport::default();
    if synthesize_data {
        let spec = cfg.synth.as_ref().ok_or_else(|| {
            Error::Config("--synthesize needs a [synth] section in the config".into())
        })?;
        stage("synthesize", synthesize(&cfg.data_root, spec))?;
    }
    let registry = stage("tokenizers", ensure_tokenizers(cfg, true))?;
    let templates = stage("templates", load_templates(cfg))?;
    for (_, template) in &templates {
        stage("templates", template.check_tokenizers(&registry))?;
    }
    let only_templates: Vec<TaskTemplate> = templates.iter().map(|(_, t)| t.clone()).collect();
    let vocab = stage("vocabulary", detect_and_build_vocab(&only_templates, &registry))?;
    let vpath = vocab_path(cfg);
    stage("vocabulary", vocab.save(&vpath))?;
    let vocab_ref = rel_file_ref(&vpath, &cfg.out_dir)?;

    for (task, template) in &templates {
        let mut tokenizer_refs = BTreeMap::new();
        for name in template.tokenizers_in_order() {
            tokenizer_refs.insert(
                name.clone(),
                rel_file_ref(&tokenizer_path(cfg, &name), &cfg.out_dir)?,
            );
        }
        for split in SPLITS {
            let dir = cfg.dataset_dir(task, split);
            let scan = stage("scan", scan_dataset_folder(&dir, template))?;
            report.id_mismatches += scan.mismatches.len();
            let dataset_name = format!("{}.{split}", task.name);
            let manifest = stage(
                "tokenize",
                tokenize_dataset(
                    &scan,
                    template,
                    &registry,
                    &dir,
                    &dataset_name,
                    vocab_ref.clone(),
                    tokenizer_refs.clone(),
                ),
            )?;
            report.rejects += manifest.rejects.len();
            let path = manifest_path(cfg, &task.name, split);
            if manifest.save(&path)? {
                report.written.push(path);
            } else {
                report.unchanged.push(path);
            }
        }
    }
    Ok(report)
}

fn load_manifest_checked(cfg: &ExperimentConfig, rt: &Runtime, task: &str, split: &str) -> Result<DatasetManifest> {
    let path = manifest_path(cfg, task, split);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "manifest {} is missing; run prepare first",
            path.display()
        )));
    }
    let manifest = DatasetManifest::load(&path)?;
    if manifest.vocabulary.sha256 != rt.vocab_sha256 {
        return Err(Error::VocabHashMismatch {
            a: manifest.vocabulary.sha256.clone(),
            b: rt.vocab_sha256.clone(),
        });
    }
    Ok(manifest)
}

fn fused_split(cfg: &ExperimentConfig, rt: &Runtime, split: &str) -> Result<FusedDataset> {
    let mut sources = Vec::new();
    for (task, template) in &rt.templates {
        sources.push(FusionSource {
            manifest: load_manifest_checked(cfg, rt, &task.name, split)?,
            template: template.clone(),
            weight: task.weight,
        });
    }
    fuse(sources)
}

fn valid_sequences(
    cfg: &ExperimentConfig,
    rt: &Runtime,
    ctx: &AssembleContext<'_>,
) -> Result<Vec<MultiStreamSequence>> {
    let mut out = Vec::new();
    for (task, template) in &rt.templates {
        let manifest = load_manifest_checked(cfg, rt, &task.name, "valid")?;
        for ex in manifest
            .examples
            .iter()
            .take(cfg.training.valid_max_examples)
        {
            let mut seq = assemble_sequence(template, &ex.items, ctx.vocab, ctx.n_q)?;
            compute_token_weights(&mut seq, ctx.loss_weights, ctx.registry)?;
            out.push(seq);
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub struct TrainReport {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub steps: u64,
    pub final_loss: f64,
    pub best_valid_loss: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainReport> {
    let rt = stage("train", load_runtime(cfg))?;
    let model_cfg = rt.model_config(cfg)?;
    let fused = stage("train", fused_split(cfg, &rt, "train"))?;

    let longest = fused
        .sources
        .iter()
        .flat_map(|s| s.manifest.examples.iter().map(|e| e.length))
        .max()
        .unwrap_or(0);
    if longest > max_input_rows(&model_cfg) {
        return Err(Error::Model(format!(
            "longest training sequence has {longest} rows but max_t {} admits only {} under {:?} interleave",
            model_cfg.max_t,
            max_input_rows(&model_cfg),
            model_cfg.interleave
        )));
    }

    let ctx = AssembleContext {
        vocab: &rt.vocab,
        registry: &rt.registry,
        n_q: rt.n_q,
        loss_weights: &cfg.training.loss_weights,
    };
    let valid_seqs = stage("train", valid_sequences(cfg, &rt, &ctx))?;

    let (mut state, mut sampler) = match resume {
        Some(path) => {
            let (state, snap) = load_checkpoint(path)?;
            if state.cfg != model_cfg {
                return Err(Error::Checkpoint(
                    "checkpoint model config does not match this experiment".into(),
                ));
            }
            let sampler = match &snap {
                Some(s) => BatchSampler::restore(&fused, cfg.training.seed, s)?,
                None => BatchSampler::new(&fused, cfg.training.seed),
            };
            (state, sampler)
        }
        None => (
            TrainState::<f32>::new(model_cfg.clone())?,
            BatchSampler::new(&fused, cfg.training.seed),
        ),
    };

    let opt = OptimConfig {
        peak_lr: cfg.training.peak_lr,
        warmup_steps: cfg.training.warmup_steps,
        clip: cfg.training.clip,
        threads: cfg.training.threads,
        ..OptimConfig::default()
    };

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("train.log");
    let valid_log_path = cfg.out_dir.join("valid.log");
    let append = state.step > 0;
    let open = |p: &Path, append: bool| -> Result<fs::File> {
        fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(p)
            .map_err(|e| Error::io(p, e))
    };
    let mut log = open(&log_path, append)?;
    let mut valid_log = open(&valid_log_path, append)?;

    let mut best_valid = f64::INFINITY;
    let mut final_loss = f64::NAN;
    let best_path = checkpoint_path(cfg, "best");
    let final_path = checkpoint_path(cfg, "final");
    while state.step < cfg.training.total_steps {
        let batch = sampler.sample_batch(cfg.training.token_budget, &ctx)?;
        let tags = batch
            .source_tags
            .first()
            .map(|(d, e)| format!("{d}:{e}(+{})", batch.source_tags.len() - 1))
            .unwrap_or_default();
        let stats = train_step(&mut state, &batch.sequences, &opt, &tags)?;
        final_loss = stats.loss;
        writeln!(
            log,
            "{} {:.6} {:.8} {}",
            stats.step, stats.loss, stats.lr, stats.tokens
        )
        .map_err(|e| Error::io(&log_path, e))?;
        if cfg.training.valid_every > 0
            && (state.step % cfg.training.valid_every == 0 || state.step == cfg.training.total_steps)
        {
            let vl = eval_loss(&state.params, &state.cfg, &valid_seqs)?;
            writeln!(valid_log, "{} {:.6}", state.step, vl)
                .map_err(|e| Error::io(&valid_log_path, e))?;
            if vl < best_valid {
                best_valid = vl;
                save_checkpoint(&best_path, &state, Some(&sampler.snapshot()))?;
            }
        }
    }
    save_checkpoint(&final_path, &state, Some(&sampler.snapshot()))?;
    if !best_path.is_file() {
        save_checkpoint(&best_path, &state, Some(&sampler.snapshot()))?;
    }
    Ok(TrainReport {
        final_checkpoint: final_path,
        best_checkpoint: best_path,
        steps: state.step,
        final_loss,
        best_valid_loss: best_valid,
    })
}

#[derive(Debug)]
pub struct InferReport {
    pub outputs: BTreeMap<String, PathBuf>,
    pub incomplete: Vec<String>,
}

/// Inference over a split: one output index file per target item, in the
/// same `example-id content` format the pipeline consumes.
pub fn cmd_infer(cfg: &ExperimentConfig, task: &str, split: &str) -> Result<InferReport> {
    let rt = stage("infer", load_runtime(cfg))?;
    let task_cfg = cfg.task(task)?;
    let template = rt.template(task)?;
    let manifest = stage("infer", load_manifest_checked(cfg, &rt, task, split))?;
    let ckpt = checkpoint_path(cfg, "final");
    if !ckpt.is_file() {
        return Err(Error::Config(format!(
            "checkpoint {} is missing; run train first",
            ckpt.display()
        )));
    }
    let (state, _) = load_checkpoint(&ckpt)?;
    let expected_cfg = rt.model_config(cfg)?;
    if state.cfg != expected_cfg {
        return Err(Error::Checkpoint(
            "checkpoint model config does not match this experiment".into(),
        ));
    }
    let decode_spec = cfg
        .decode
        .get(task)
        .ok_or_else(|| Error::Config(format!("no [decode.{task}] section")))?;

    let out_dir = infer_dir(cfg, task, split);
    let frames_dir = out_dir.join("frames");
    let mut outputs: BTreeMap<String, IndexFile> = template
        .targets
        .iter()
        .map(|t| (t.item_name.clone(), IndexFile::new(t.item_name.clone())))
        .collect();
    let mut incomplete = Vec::new();

    for ex in &manifest.examples {
        let mut conditions = BTreeMap::new();
        for spec in &template.conditions {
            let item = ex.items.get(&spec.item_name).ok_or_else(|| {
                Error::MissingItem(spec.item_name.clone())
            })?;
            conditions.insert(spec.item_name.clone(), item.clone());
        }
        let prefix_rows = 2 + template.conditions.len()
            + conditions.values().map(|i| i.len()).sum::<usize>();
        let mut dp = decode_spec.to_params(prefix_rows)?;
        dp.seed = decode_spec.seed ^ util::fnv1a(&ex.example_id);
        let outcome = generate(
            &state.params,
            &state.cfg,
            template,
            &conditions,
            &rt.vocab,
            &rt.registry,
            &dp,
        )?;
        if !outcome.complete {
            incomplete.push(ex.example_id.clone());
        }
        for spec in &template.targets {
            let tokenizer = rt.registry.get(&spec.tokenizer_name)?;
            let content = match outcome.items.get(&spec.item_name) {
                None => String::new(),
                Some(item) => match tokenizer.modality() {
                    Modality::Text => tokenizer.decode_text(item)?,
                    Modality::Audio | Modality::Other => {
                        let rel = format!("frames/{}.{}.fm", ex.example_id, spec.item_name);
                        let frames = tokenizer.decode_frames(item)?;
                        frames.save(&frames_dir.join(format!(
                            "{}.{}.fm",
                            ex.example_id, spec.item_name
                        )))?;
                        rel
                    }
                },
            };
            outputs
                .get_mut(&spec.item_name)
                .unwrap()
                .entries
                .push(IndexEntry {
                    example_id: ex.example_id.clone(),
                    content,
                });
        }
    }

    let mut paths = BTreeMap::new();
    for (item, index) in &outputs {
        let path = out_dir.join(item);
        index.save(&path)?;
        paths.insert(item.clone(), path);
    }
    if !incomplete.is_empty() {
        let body = incomplete.join("\n") + "\n";
        util::write_if_changed(&out_dir.join("incomplete"), body.as_bytes())?;
    }
    let _ = task_cfg;
    Ok(InferReport {
        outputs: paths,
        incomplete,
    })
}

/// Evaluation over a split: teacher-forced perplexity always, plus WER/CER
/// for text targets and frame reconstruction error for audio targets.
pub fn cmd_eval(cfg: &ExperimentConfig, task: &str, split: &str) -> Result<EvalReport> {
    let rt = stage("eval", load_runtime(cfg))?;
    let task_cfg = cfg.task(task)?;
    let template = rt.template(task)?;
    let manifest = stage("eval", load_manifest_checked(cfg, &rt, task, split))?;
    let ckpt = checkpoint_path(cfg, "final");
    let (state, _) = load_checkpoint(&ckpt)?;

    let mut metrics = BTreeMap::new();
    let mut records: Vec<ExampleRecord> = Vec::new();
    let mut warnings = Vec::new();

    let ppl = perplexity(&state.params, &state.cfg, &manifest, template, &rt.vocab)?;
    metrics.insert("perplexity".to_string(), ppl);

    let hyp_dir = infer_dir(cfg, task, split);
    let dataset_dir = cfg.dataset_dir(task_cfg, split);
    let multi_target = template.targets.len() > 1;
    for spec in &template.targets {
        let hyp_path = hyp_dir.join(&spec.item_name);
        if !hyp_path.is_file() {
            return Err(Error::Config(format!(
                "hypothesis file {} is missing; run infer first",
                hyp_path.display()
            )));
        }
        let hyps = IndexFile::load(&hyp_path, &spec.item_name)?;
        let refs = IndexFile::load(&dataset_dir.join(&spec.item_name), &spec.item_name)?;
        let prefix = if multi_target {
            format!("{}:", spec.item_name)
        } else {
            String::new()
        };
        match rt.registry.get(&spec.tokenizer_name)?.modality() {
            Modality::Text => {
                let wer = edit_distance_wer(&hyps, &refs, EvalUnit::Word, task)?;
                let cer = edit_distance_wer(&hyps, &refs, EvalUnit::Char, task)?;
                metrics.insert(format!("{prefix}wer"), wer.metrics["wer"]);
                metrics.insert(format!("{prefix}cer"), cer.metrics["cer"]);
                warnings.extend(wer.warnings);
                records.extend(cer.records);
            }
            Modality::Audio | Modality::Other => {
                let mut mse_sum = 0.0;
                let mut ratio_sum = 0.0;
                let mut n = 0usize;
                for entry in &refs.entries {
                    let Some(hyp_content) = hyps.get(&entry.example_id) else {
                        return Err(Error::Eval(format!(
                            "hypothesis missing example '{}'",
                            entry.example_id
                        )));
                    };
                    if hyp_content.is_empty() {
                        warnings.push(format!(
                            "example '{}' produced no {} output",
                            entry.example_id, spec.item_name
                        ));
                        continue;
                    }
                    let hyp_frames = FrameMatrix::load(&hyp_dir.join(hyp_content))?;
                    let ref_frames = FrameMatrix::load(&dataset_dir.join(&entry.content))?;
                    if hyp_frames.n_frames() == 0 {
                        warnings.push(format!(
                            "example '{}' produced an empty {} hypothesis",
                            entry.example_id, spec.item_name
                        ));
                        continue;
                    }
                    let out = frame_mse(&hyp_frames, &ref_frames)?;
                    mse_sum += out.mse;
                    ratio_sum += out.length_ratio;
                    n += 1;
                    records.push(ExampleRecord {
                        example_id: entry.example_id.clone(),
                        hypothesis: hyp_content.to_string(),
                        reference: entry.content.clone(),
                        value: out.mse,
                    });
                }
                if n > 0 {
                    metrics.insert(format!("{prefix}frame_mse"), mse_sum / n as f64);
                    metrics.insert(format!("{prefix}length_ratio"), ratio_sum / n as f64);
                }
            }
        }
    }

    let report = EvalReport {
        task_name: task.to_string(),
        metrics,
        records,
        warnings,
    };
    let reports_dir = cfg.out_dir.join("reports");
    report.save(
        &reports_dir.join(format!("{task}.{split}.json")),
        &reports_dir.join(format!("{task}.{split}.txt")),
    )?;
    Ok(report)
}

/// Per-task teacher-forced validation loss; used by multitask comparisons.
pub fn task_valid_loss(cfg: &ExperimentConfig, task: &str, split: &str) -> Result<f64> {
    let rt = load_runtime(cfg)?;
    let template = rt.template(task)?;
    let manifest = load_manifest_checked(cfg, &rt, task, split)?;
    let (state, _) = load_checkpoint(&checkpoint_path(cfg, "final"))?;
    let ctx = AssembleContext {
        vocab: &rt.vocab,
        registry: &rt.registry,
        n_q: rt.n_q,
        loss_weights: &cfg.training.loss_weights,
    };
    let mut seqs = Vec::new();
    for ex in manifest.examples.iter().take(cfg.training.valid_max_examples) {
        let mut seq = assemble_sequence(template, &ex.items, ctx.vocab, ctx.n_q)?;
        compute_token_weights(&mut seq, ctx.loss_weights, ctx.registry)?;
        seqs.push(seq);
    }
    eval_loss(&state.params, &state.cfg, &seqs)
}
