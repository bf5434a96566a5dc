//! The modality-mask state machine.
//!
//! The current modality is whatever the most recent tokenizer indicator
//! announced; stream 0 may emit only ids of the current region, the next
//! target's indicator, or Eos once every target has been opened and the
//! minimum length is met. This is the strictest consistent reading: nothing
//! outside the current region ever becomes legal mid-span.

use crate::error::{Error, Result};
use crate::template::TaskTemplate;
use crate::tokenizer::TokenizerRegistry;
use crate::vocab::{Vocabulary, EOS};

#[derive(Debug, Clone)]
pub struct ModalityState {
    /// Index into the template's targets of the open span.
    current: Option<usize>,
    /// Next target whose indicator is still owed.
    next_pending: usize,
    /// Stream-0 rows emitted since the prefix.
    generated_rows: usize,
    finished: bool,
}

impl ModalityState {
    pub fn new() -> Self {
        ModalityState {
            current: None,
            next_pending: 0,
            generated_rows: 0,
            finished: false,
        }
    }

    pub fn current_target(&self) -> Option<usize> {
        self.current
    }

    pub fn generated_rows(&self) -> usize {
        self.generated_rows
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn all_targets_opened(&self, template: &TaskTemplate) -> bool {
        self.next_pending == template.targets.len()
    }

    /// Feed the stream-0 token that was actually emitted.
    pub fn advance(
        &mut self,
        token: u32,
        template: &TaskTemplate,
        vocab: &Vocabulary,
    ) -> Result<()> {
        if self.finished {
            return Err(Error::Decode("state advanced past Eos".into()));
        }
        self.generated_rows += 1;
        if token == EOS {
            self.finished = true;
            return Ok(());
        }
        if self.next_pending < template.targets.len() {
            let next_ind = vocab.indicator_id(&template.targets[self.next_pending].tokenizer_name)?;
            if token == next_ind {
                self.current = Some(self.next_pending);
                self.next_pending += 1;
                return Ok(());
            }
        }
        Ok(())
    }
}

impl Default for ModalityState {
    fn default() -> Self {
        Self::new()
    }
}

/// The stream-0 mask for the next generated row: current-region ids, the
/// next legal indicator, and Eos once all targets are open and the length
/// heuristic is satisfied.
pub fn step_mask(
    state: &ModalityState,
    template: &TaskTemplate,
    vocab: &Vocabulary,
    registry: &TokenizerRegistry,
    min_len: usize,
) -> Result<Vec<bool>> {
    let mut allowed = vec![false; vocab.total_size() as usize];
    if state.finished {
        return Ok(allowed);
    }
    if let Some(cur) = state.current {
        let spec = &template.targets[cur];
        let region = vocab.region(&spec.tokenizer_name)?;
        let streams = registry.get(&spec.tokenizer_name)?.stream_specs();
        let range = &streams[0].local_range;
        for local in range.clone() {
            allowed[(region.offset + local) as usize] = true;
        }
    }
    if state.next_pending < template.targets.len() {
        let ind = vocab.indicator_id(&template.targets[state.next_pending].tokenizer_name)?;
        allowed[ind as usize] = true;
    } else if state.generated_rows >= min_len {
        allowed[EOS as usize] = true;
    }
    Ok(allowed)
}

/// Allowed ids for a non-primary stream inside a content row of `tokenizer`:
/// the stream's own sub-range, or Pad when the item has fewer streams.
pub fn stream_mask(
    tokenizer: &str,
    stream: usize,
    vocab: &Vocabulary,
    registry: &TokenizerRegistry,
) -> Result<Option<std::ops::Range<u32>>> {
    let streams = registry.get(tokenizer)?.stream_specs();
    if stream >= streams.len() {
        return Ok(None);
    }
    let region = vocab.region(tokenizer)?;
    let r = &streams[stream].local_range;
    Ok(Some(region.offset + r.start..region.offset + r.end))
}
