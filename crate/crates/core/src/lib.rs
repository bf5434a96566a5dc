//! Desk-scale multi-stream speech language model workbench.
//!
//! The crate covers the full workflow: task-template-driven sequence
//! assembly over a joint vocabulary, offline tokenization into dataset
//! manifests, multitask fusion with token-budget batching, a small
//! decoder-only multi-stream transformer trained with weighted
//! cross-entropy, modality-constrained generation, and task evaluation.

pub mod config;
pub mod decode;
pub mod error;
pub mod frames;
pub mod fusion;
pub mod index;
pub mod manifest;
pub mod model;
pub mod preprocess;
pub mod sequence;
pub mod synth;
pub mod template;
pub mod eval;
pub mod tokenizer;
pub mod util;
pub mod workflow;
pub mod vocab;

pub use error::{Error, Result};
