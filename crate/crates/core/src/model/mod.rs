//! The toy multi-stream decoder-only transformer: configuration, parameters,
//! hand-rolled forward/backward, weighted cross-entropy, delay interleaving,
//! the optimizer loop, and checkpointing.

pub mod checkpoint;
pub mod interleave;
pub mod loss;
pub mod optim;
pub mod real;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use interleave::{delay_apply, delay_invert};
pub use loss::{cross_entropy_grad, weighted_cross_entropy, CeOut};
pub use optim::{lr_at, train_step, OptimConfig, StepStats, TrainState};
pub use real::{Mat, Real};
pub use transformer::{backward, forward, forward_cached, LogitRows, Logits, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    Parallel,
    Delay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub n_q: usize,
    pub vocab_size: usize,
    /// Longest grid the position table covers; under Delay this must include
    /// the n_q - 1 extra rows the shift adds.
    pub max_t: usize,
    pub interleave: Interleave,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Model(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_q == 0 || self.n_layers == 0 || self.ff_mult == 0 {
            return Err(Error::Model("n_q, n_layers and ff_mult must be positive".into()));
        }
        if self.vocab_size == 0 || self.max_t == 0 {
            return Err(Error::Model("vocab_size and max_t must be positive".into()));
        }
        if self.interleave == Interleave::Delay && self.max_t < self.n_q {
            return Err(Error::Model(format!(
                "max_t {} cannot hold the delay shift of {} streams",
                self.max_t, self.n_q
            )));
        }
        Ok(())
    }
}
