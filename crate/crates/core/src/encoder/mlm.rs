use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{SubwordVocab, SPECIALS};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, Parameters};
use crate::rng::{self, Rng};

use super::model::StateGrads;
use super::ops;
use super::weights::EncoderWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            steps: 300,
            batch_size: 16,
            mask_prob: 0.15,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MlmReport {
    /// Mean masked-token cross-entropy of every step's batch (0 when nothing was masked).
    pub loss_trace: Vec<f64>,
}

/// BERT-style corruption of non-special positions: of the selected ones,
/// 80% become `[MASK]`, 10% a random unit, 10% stay. Returns the corrupted
/// sequence and `(position, original id)` targets.
pub fn mask_tokens(ids: &[u32], mask_prob: f64, vocab_size: usize, rng: &mut Rng) -> (Vec<u32>, Vec<(usize, u32)>) {
    let mut out = ids.to_vec();
    let mut targets = Vec::new();
    if mask_prob <= 0.0 {
        return (out, targets);
    }
    let first_regular = SPECIALS.len() as u32;
    for (p, &id) in ids.iter().enumerate() {
        if id < first_regular || !rng.gen_bool(mask_prob.min(1.0)) {
            continue;
        }
        targets.push((p, id));
        let r: f64 = rng.gen();
        if r < 0.8 {
            out[p] = SubwordVocab::MASK;
        } else if r < 0.9 && vocab_size as u32 > first_regular {
            out[p] = rng.gen_range(first_regular..vocab_size as u32);
        }
    }
    (out, targets)
}

/// Summed masked-token cross-entropy of one sequence; accumulates gradients
/// (scaled by `scale`) into `grads` and returns the unscaled loss.
pub fn mlm_loss(weights: &EncoderWeights, ids: &[u32], targets: &[(usize, u32)], scale: f64, grads: &mut EncoderWeights) -> Result<f64> {
    if targets.is_empty() {
        return Ok(0.0);
    }
    let cache = weights.forward_cached(ids, ids.len(), None)?;
    let d = weights.config.model_dim;
    let v = weights.config.vocab_size;
    let top = cache.states.layers.len() - 1;
    let mut upstream = StateGrads::for_states(&cache.states);
    let mut loss = 0.0;
    for &(pos, target) in targets {
        let h = cache.states.row(top, pos).to_vec();
        let mut logits = ops::matmul_a_bt(&h, &weights.token_embedding, 1, d, v);
        ops::add_assign(&mut logits, &weights.mlm_bias);
        let lse = ops::log_sum_exp(&logits);
        loss += lse - logits[target as usize];
        let mut dlogits: Vec<f64> = logits.iter().map(|&z| (z - lse).exp() * scale).collect();
        dlogits[target as usize] -= scale;
        ops::add_assign(&mut grads.mlm_bias, &dlogits);
        ops::matmul_at_b_acc(&mut grads.token_embedding, &dlogits, &h, 1, v, d);
        let dh = ops::matmul(&dlogits, &weights.token_embedding, 1, v, d);
        ops::add_assign(upstream.row_mut(top, pos), &dh);
    }
    weights.backward(&cache, &upstream, grads);
    Ok(loss)
}

/// Masked-token pretraining with Adam on `corpus` (encoder-ready id sequences).
pub fn pretrain_mlm(weights: &EncoderWeights, corpus: &[Vec<u32>], config: &MlmConfig) -> Result<(EncoderWeights, MlmReport)> {
    let mut model = weights.clone();
    let mut report = MlmReport::default();
    if config.steps == 0 {
        return Ok((model, report));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("empty pretraining corpus"));
    }
    if config.batch_size == 0 || !(0.0..=1.0).contains(&config.mask_prob) {
        return Err(Error::invalid("batch_size must be ≥ 1 and mask_prob in [0,1]"));
    }
    let mut order_rng = rng::substream(config.seed, rng::streams::SHUFFLE);
    let mut mask_rng = rng::substream(config.seed, rng::streams::MASKING);
    let mut adam = Adam::for_tensors(AdamConfig::with_lr(config.lr), &model.tensors());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;

    for _ in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let masked: Vec<_> = batch
            .iter()
            .map(|&i| mask_tokens(&corpus[i], config.mask_prob, model.config.vocab_size, &mut mask_rng))
            .collect();
        let total: usize = masked.iter().map(|(_, t)| t.len()).sum();
        if total == 0 {
            report.loss_trace.push(0.0);
            continue;
        }
        let scale = 1.0 / total as f64;
        let mut grads = model.zeros_like();
        let mut loss = 0.0;
        for (ids, targets) in &masked {
            loss += mlm_loss(&model, ids, targets, scale, &mut grads)?;
        }
        report.loss_trace.push(loss * scale);
        adam.update(model.tensors_mut(), grads.tensors());
    }
    Ok((model, report))
}
