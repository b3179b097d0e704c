//! Small pre-layer-norm transformer encoder with hand-written gradients.

mod checkpoint;
mod mlm;
mod model;
pub mod ops;
mod pooling;
mod weights;

use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_roundtrip, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlm::{mask_tokens, mlm_loss, pretrain_mlm, MlmConfig, MlmReport};
pub use model::{ForwardCache, HiddenStates, StateGrads};
pub use pooling::{word_vector, word_vector_grad, Pooling, WordVector};
pub use weights::{EncoderConfig, EncoderWeights, LayerWeights};

/// Anything that maps a token sequence to per-layer hidden states. The
/// analysis and retrieval code is written against this so it can run on
/// hand-built stubs as well as real encoders.
pub trait ContextEncoder {
    /// Number of hidden-state layers returned by `encode` (embeddings included).
    fn num_states(&self) -> usize;
    fn encode(&self, ids: &[u32]) -> Result<HiddenStates>;
}

impl ContextEncoder for EncoderWeights {
    fn num_states(&self) -> usize {
        self.config.layers + 1
    }

    fn encode(&self, ids: &[u32]) -> Result<HiddenStates> {
        self.hidden_states(ids)
    }
}

/// Sequences right-padded with `[PAD]` to a common length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn new(seqs: &[Vec<u32>], pad: u32) -> Self {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        PaddedBatch {
            ids: seqs
                .iter()
                .map(|s| {
                    let mut v = s.clone();
                    v.resize(width, pad);
                    v
                })
                .collect(),
            lengths: seqs.iter().map(Vec::len).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }
}

/// Hidden states for a padded batch, addressable as `(layer, item, pos, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStates {
    pub items: Vec<HiddenStates>,
}

impl BatchStates {
    /// `(layers + 1, batch, seq, model_dim)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let first = &self.items[0];
        (first.layers.len(), self.items.len(), first.seq_len, first.dim)
    }

    pub fn get(&self, layer: usize, item: usize, pos: usize) -> &[f64] {
        self.items[item].row(layer, pos)
    }
}

/// Encodes every item of the batch; padded positions are excluded from
/// attention, so item results are independent of batch composition.
pub fn forward(weights: &EncoderWeights, batch: &PaddedBatch) -> Result<BatchStates> {
    if batch.ids.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let items = batch
        .ids
        .iter()
        .zip(&batch.lengths)
        .map(|(ids, &len)| Ok(weights.forward_cached(ids, len, None)?.states))
        .collect::<Result<_>>()?;
    Ok(BatchStates { items })
}
