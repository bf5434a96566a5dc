//! End-to-end workflow tests on a tiny synthetic corpus: prepare
//! idempotence, training logs, checkpoint resume, inference and evaluation
//! contracts.

use std::fs;
use std::path::{Path, PathBuf};

use speechlm::config::ExperimentConfig;
use speechlm::manifest::DatasetManifest;
use speechlm::workflow::{self, checkpoint_path, manifest_path};

fn repo_templates() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../templates")
        .canonicalize()
        .unwrap()
}

fn toy_config_text(root: &Path, total_steps: u64, threads: usize) -> String {
    let templates = repo_templates();
    format!(
        r#"
out_dir = "{root}/out"
data_root = "{root}/data"

[synth]
symbols = 8
feature_dim = 4
n_train = 40
n_valid = 10
n_test = 10
min_len = 4
max_len = 9
seed = 5

[[tokenizers]]
kind = "subword"
name = "bpe"
vocab_size = 12
corpus = "{root}/data/corpora/text.txt"
seed = 1

[[tokenizers]]
kind = "ssl"
name = "ssl"
clusters = 8
corpus = "{root}/data/corpora/frames.fm"
seed = 2

[[tokenizers]]
kind = "codec"
name = "codec"
n_codebooks = 2
codebook_size = 8
corpus = "{root}/data/corpora/frames.fm"
seed = 3

[[tokenizers]]
kind = "codec_ssl"
name = "codec_ssl"
ssl = "ssl"
codec = "codec"

[[tasks]]
name = "asr"
template = "{tpl}/asr.template"
data = "asr"
weight = 1.0

[[tasks]]
name = "tts"
template = "{tpl}/tts.template"
data = "tts"
weight = 1.0

[[tasks]]
name = "textlm"
template = "{tpl}/textlm.template"
data = "textlm"
weight = 1.0

[[tasks]]
name = "audiolm"
template = "{tpl}/audiolm.template"
data = "audiolm"
weight = 1.0

[model]
d_model = 24
n_layers = 1
n_heads = 2
ff_mult = 2
max_t = 64
interleave = "parallel"
seed = 11

[training]
peak_lr = 2e-3
warmup_steps = 5
total_steps = {total_steps}
token_budget = 256
valid_every = 10
valid_max_examples = 10
threads = {threads}
seed = 21

[training.loss_weights]
bpe = 1.0
ssl = 0.5
codec = 0.0625

[decode.asr]
strategy = "greedy"
min_len = 1
max_len_ratio = 3.0
seed = 31

[decode.tts]
strategy = "top_k"
k = 30
temperature = 0.8
min_len = 1
max_len_ratio = 3.0
seed = 32

[decode.textlm]
strategy = "greedy"
min_len = 1
max_len = 24
seed = 33

[decode.audiolm]
strategy = "greedy"
min_len = 1
max_len = 36
seed = 34
"#,
        root = root.display(),
        tpl = templates.display(),
        total_steps = total_steps,
        threads = threads,
    )
}

fn load_config(root: &Path, total_steps: u64, threads: usize) -> ExperimentConfig {
    let path = root.join("exp.toml");
    fs::write(&path, toy_config_text(root, total_steps, threads)).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn prepare_builds_artifacts_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(tmp.path(), 10, 1);

    let first = workflow::cmd_prepare(&cfg, true).unwrap();
    assert_eq!(first.written.len(), 12, "4 tasks x 3 splits");
    assert_eq!(first.rejects, 0);
    assert!(workflow::vocab_path(&cfg).is_file());
    for task in ["asr", "tts", "textlm", "audiolm"] {
        for split in ["train", "valid", "test"] {
            let m = DatasetManifest::load(&manifest_path(&cfg, task, split)).unwrap();
            assert!(!m.examples.is_empty());
            assert_eq!(m.task_name, task);
        }
    }

    // Second run over unchanged inputs rewrites nothing.
    let second = workflow::cmd_prepare(&cfg, true).unwrap();
    assert!(second.written.is_empty(), "{:?}", second.written);
    assert_eq!(second.unchanged.len(), 12);
}

#[test]
fn missing_index_file_names_folder_and_item() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(tmp.path(), 10, 1);
    workflow::cmd_prepare(&cfg, true).unwrap();
    fs::remove_file(tmp.path().join("data/asr/valid/text")).unwrap();
    let err = workflow::cmd_prepare(&cfg, false).unwrap_err().to_string();
    assert!(err.contains("text"), "{err}");
    assert!(err.contains("asr"), "{err}");
}

#[test]
fn train_logs_one_line_per_step_and_infer_eval_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(tmp.path(), 12, 2);
    workflow::cmd_prepare(&cfg, true).unwrap();
    let report = workflow::cmd_train(&cfg, None).unwrap();
    assert_eq!(report.steps, 12);
    assert!(report.final_loss.is_finite());

    let log = fs::read_to_string(cfg.out_dir.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 12);
    for line in log.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields.len(), 4, "step loss lr tokens: {line}");
    }
    let valid = fs::read_to_string(cfg.out_dir.join("valid.log")).unwrap();
    assert!(!valid.lines().next().unwrap().is_empty());

    let infer = workflow::cmd_infer(&cfg, "asr", "test").unwrap();
    assert!(infer.outputs.contains_key("text"));
    let eval = workflow::cmd_eval(&cfg, "asr", "test").unwrap();
    assert!(eval.metrics.contains_key("wer"));
    assert!(eval.metrics.contains_key("cer"));
    assert!(eval.metrics.contains_key("perplexity"));
    assert_eq!(eval.records.len(), 10);

    // Audio-target task produces frame metrics.
    workflow::cmd_infer(&cfg, "tts", "test").unwrap();
    let eval_tts = workflow::cmd_eval(&cfg, "tts", "test").unwrap();
    assert!(
        eval_tts.metrics.contains_key("frame_mse")
            || !eval_tts.warnings.is_empty(),
        "{eval_tts:?}"
    );
}

#[test]
fn eval_on_reference_outputs_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(tmp.path(), 8, 1);
    workflow::cmd_prepare(&cfg, true).unwrap();
    workflow::cmd_train(&cfg, None).unwrap();
    // Plant the references as hypotheses: WER must be exactly zero.
    let hyp_dir = workflow::infer_dir(&cfg, "asr", "test");
    fs::create_dir_all(&hyp_dir).unwrap();
    fs::copy(
        tmp.path().join("data/asr/test/text"),
        hyp_dir.join("text"),
    )
    .unwrap();
    let eval = workflow::cmd_eval(&cfg, "asr", "test").unwrap();
    assert_eq!(eval.metrics["wer"], 0.0);
    assert_eq!(eval.metrics["cer"], 0.0);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();

    // Run A: 12 steps straight through.
    let cfg_a = load_config(tmp_a.path(), 12, 1);
    workflow::cmd_prepare(&cfg_a, true).unwrap();
    workflow::cmd_train(&cfg_a, None).unwrap();

    // Run B: 6 steps, then resume to 12.
    let cfg_b6 = load_config(tmp_b.path(), 6, 1);
    workflow::cmd_prepare(&cfg_b6, true).unwrap();
    workflow::cmd_train(&cfg_b6, None).unwrap();
    let mid = checkpoint_path(&cfg_b6, "final");
    let resumed = tmp_b.path().join("mid.ckpt");
    fs::copy(&mid, &resumed).unwrap();
    let cfg_b12 = load_config(tmp_b.path(), 12, 1);
    workflow::cmd_train(&cfg_b12, Some(&resumed)).unwrap();

    let bytes_a = fs::read(checkpoint_path(&cfg_a, "final")).unwrap();
    let bytes_b = fs::read(checkpoint_path(&cfg_b12, "final")).unwrap();
    assert_eq!(bytes_a, bytes_b, "resumed run diverged from straight run");
}

#[test]
fn unknown_task_lists_configured_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load_config(tmp.path(), 8, 1);
    let err = cfg.task("nope").unwrap_err().to_string();
    for t in ["asr", "tts", "textlm", "audiolm"] {
        assert!(err.contains(t), "{err}");
    }
}
