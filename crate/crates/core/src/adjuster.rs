//! Cross-lingual adjustment: pull the contextual vectors of aligned word
//! occurrences together while anchoring source-word vectors to a frozen copy
//! of the starting encoder.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aligner::{WordPair, WordPairSet};
use crate::encoder::{word_vector, word_vector_grad, EncoderWeights, ForwardCache, Pooling, StateGrads};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, Parameters};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjustConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_pairs: usize,
    pub pooling: Pooling,
    /// Hidden-state index read for word vectors; `None` means the last one.
    pub layer: Option<usize>,
    pub seed: u64,
}

impl Default for AdjustConfig {
    fn default() -> Self {
        AdjustConfig {
            lr: 5e-5,
            epochs: 1,
            batch_pairs: 16,
            pooling: Pooling::Average,
            layer: None,
            seed: 0,
        }
    }
}

impl AdjustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("adjust lr must be > 0, got {}", self.lr)));
        }
        if self.batch_pairs == 0 {
            return Err(Error::Config("adjust batch_pairs must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn resolved_layer(&self, model: &EncoderWeights) -> usize {
        self.layer.unwrap_or(model.config.layers)
    }
}

/// Frozen snapshot f⁰ of the encoder before adjustment. Source word vectors
/// of a pair set can be cached once since the weights never change.
#[derive(Debug, Clone)]
pub struct AnchorModel {
    weights: EncoderWeights,
    layer: usize,
    pooling: Pooling,
    cache: HashMap<(Vec<u32>, (usize, usize)), Vec<f64>>,
}

impl AnchorModel {
    pub fn new(weights: EncoderWeights, layer: usize, pooling: Pooling) -> Result<Self> {
        if layer > weights.config.layers {
            return Err(Error::invalid(format!(
                "layer {layer} out of range for a {}-layer encoder",
                weights.config.layers
            )));
        }
        Ok(AnchorModel {
            weights,
            layer,
            pooling,
            cache: HashMap::new(),
        })
    }

    /// Snapshot plus cached f⁰ vectors for every source occurrence in `pairs`.
    pub fn with_cached_sources(weights: EncoderWeights, layer: usize, pooling: Pooling, pairs: &WordPairSet) -> Result<Self> {
        let mut anchor = Self::new(weights, layer, pooling)?;
        let mut by_sentence: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for it in &pairs.items {
            by_sentence.entry(it.sentence).or_default().push(it.src_span);
        }
        for (s, spans) in by_sentence {
            let ids = &pairs.src_contexts[s].subword_ids;
            let states = anchor.weights.hidden_states(ids)?;
            for span in spans {
                let v = word_vector(&states, span, layer, pooling)?.values;
                anchor.cache.insert((ids.clone(), span), v);
            }
        }
        Ok(anchor)
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    /// f⁰ of the source side of `item`.
    pub fn source_vector<'a>(&'a self, pairs: &WordPairSet, item: &WordPair) -> Result<Cow<'a, [f64]>> {
        let ids = &pairs.src_contexts[item.sentence].subword_ids;
        if let Some(v) = self.cache.get(&(ids.clone(), item.src_span)) {
            return Ok(Cow::Borrowed(v));
        }
        let states = self.weights.hidden_states(ids)?;
        Ok(Cow::Owned(word_vector(&states, item.src_span, self.layer, self.pooling)?.values))
    }
}

/// Per-term breakdown of the alignment loss on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pull: f64,
    pub reg: f64,
    pub total: f64,
}

/// `(‖s − t‖², ‖s − s⁰‖²)` for one pair of word vectors.
pub fn pair_terms(fs: &[f64], ft: &[f64], f0s: &[f64]) -> (f64, f64) {
    let pull = fs.iter().zip(ft).map(|(a, b)| (a - b).powi(2)).sum();
    let reg = fs.iter().zip(f0s).map(|(a, b)| (a - b).powi(2)).sum();
    (pull, reg)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Side {
    Src,
    Tgt,
}

/// Alignment loss over `pairs.items[batch]`, with gradients of
/// `scale × loss` accumulated into `grads`. Contexts are encoded once per
/// distinct sentence; the returned terms are unscaled.
pub fn alignment_loss_into(
    model: &EncoderWeights,
    anchor: &AnchorModel,
    pairs: &WordPairSet,
    batch: &[usize],
    scale: f64,
    grads: &mut EncoderWeights,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::invalid("empty alignment batch"));
    }
    let (layer, pooling) = (anchor.layer, anchor.pooling);
    let mut keys = BTreeSet::new();
    for &b in batch {
        let it = pairs
            .items
            .get(b)
            .ok_or_else(|| Error::invalid(format!("pair index {b} out of range")))?;
        keys.insert((Side::Src, it.sentence));
        keys.insert((Side::Tgt, it.sentence));
    }
    let mut caches: BTreeMap<(Side, usize), ForwardCache> = BTreeMap::new();
    for (side, s) in keys {
        let ctx = match side {
            Side::Src => &pairs.src_contexts[s],
            Side::Tgt => &pairs.tgt_contexts[s],
        };
        let ids = &ctx.subword_ids;
        caches.insert((side, s), model.forward_cached(ids, ids.len(), dropout_rng.as_deref_mut())?);
    }
    let mut upstream: BTreeMap<(Side, usize), StateGrads> =
        caches.iter().map(|(k, c)| (*k, StateGrads::for_states(&c.states))).collect();

    let mut terms = LossTerms::default();
    for &b in batch {
        let it = &pairs.items[b];
        let fs = word_vector(&caches[&(Side::Src, it.sentence)].states, it.src_span, layer, pooling)?.values;
        let ft = word_vector(&caches[&(Side::Tgt, it.sentence)].states, it.tgt_span, layer, pooling)?.values;
        let f0 = anchor.source_vector(pairs, it)?;
        let (pull, reg) = pair_terms(&fs, &ft, &f0);
        terms.pull += pull;
        terms.reg += reg;

        let g_src: Vec<f64> = (0..fs.len())
            .map(|c| scale * 2.0 * ((fs[c] - ft[c]) + (fs[c] - f0[c])))
            .collect();
        let g_tgt: Vec<f64> = (0..fs.len()).map(|c| -scale * 2.0 * (fs[c] - ft[c])).collect();
        let up = upstream.get_mut(&(Side::Src, it.sentence)).unwrap();
        word_vector_grad(up, it.src_span, layer, pooling, &g_src);
        let up = upstream.get_mut(&(Side::Tgt, it.sentence)).unwrap();
        word_vector_grad(up, it.tgt_span, layer, pooling, &g_tgt);
    }
    terms.total = terms.pull + terms.reg;
    for (key, cache) in &caches {
        model.backward(cache, &upstream[key], grads);
    }
    Ok(terms)
}

/// Alignment loss and its gradient with respect to every encoder parameter.
pub fn alignment_loss(
    model: &EncoderWeights,
    anchor: &AnchorModel,
    pairs: &WordPairSet,
    batch: &[usize],
) -> Result<(LossTerms, EncoderWeights)> {
    let mut grads = model.zeros_like();
    let terms = alignment_loss_into(model, anchor, pairs, batch, 1.0, &mut grads, None)?;
    Ok((terms, grads))
}

/// Adjusts `model` on `pairs`, anchoring to a snapshot of `model` itself.
pub fn adjust(model: &EncoderWeights, pairs: &WordPairSet, config: &AdjustConfig) -> Result<(EncoderWeights, Vec<LossTerms>)> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok((model.clone(), Vec::new()));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no aligned pairs to adjust on"));
    }
    let anchor = AnchorModel::with_cached_sources(model.clone(), config.resolved_layer(model), config.pooling, pairs)?;
    adjust_against(model, &anchor, pairs, config)
}

/// Epochs of shuffled mini-batch Adam descent on the alignment loss.
pub fn adjust_against(
    model: &EncoderWeights,
    anchor: &AnchorModel,
    pairs: &WordPairSet,
    config: &AdjustConfig,
) -> Result<(EncoderWeights, Vec<LossTerms>)> {
    config.validate()?;
    let mut model = model.clone();
    let mut trace = Vec::new();
    if config.epochs == 0 {
        return Ok((model, trace));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no aligned pairs to adjust on"));
    }
    let mut order_rng = rng::substream(config.seed, rng::streams::SHUFFLE);
    let mut dropout_rng = rng::substream(config.seed, rng::streams::DROPOUT);
    let use_dropout = model.config.dropout > 0.0;
    let mut adam = Adam::for_tensors(AdamConfig::with_lr(config.lr), &model.tensors());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_pairs) {
            let mut grads = model.zeros_like();
            let drop = use_dropout.then_some(&mut dropout_rng);
            let terms = alignment_loss_into(&model, anchor, pairs, batch, 1.0, &mut grads, drop)?;
            trace.push(terms);
            adam.update(model.tensors_mut(), grads.tensors());
        }
    }
    Ok((model, trace))
}

pub fn loss_trace_csv(trace: &[LossTerms]) -> String {
    let mut out = String::from("step,pull_term,reg_term,total\n");
    for (i, t) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", t.pull, t.reg, t.total);
    }
    out
}

pub fn write_loss_trace(path: &Path, trace: &[LossTerms]) -> Result<()> {
    fs::write(path, loss_trace_csv(trace))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SubwordVocab, TokenizedSentence};
    use crate::encoder::EncoderConfig;

    fn small() -> EncoderWeights {
        EncoderWeights::init(
            EncoderConfig {
                layers: 1,
                model_dim: 8,
                heads: 2,
                ffn_dim: 16,
                max_positions: 8,
                vocab_size: 12,
                dropout: 0.0,
            },
            2,
        )
        .unwrap()
    }

    fn ctx(ids: &[u32]) -> TokenizedSentence {
        TokenizedSentence {
            subword_ids: ids.to_vec(),
            word_spans: (1..ids.len()).map(|p| (p, p + 1)).collect(),
        }
    }

    fn pair_set(src: &[u32], tgt: &[u32]) -> WordPairSet {
        WordPairSet {
            src_contexts: vec![ctx(src)],
            tgt_contexts: vec![ctx(tgt)],
            items: (1..src.len().min(tgt.len()))
                .map(|p| WordPair {
                    sentence: 0,
                    src_word: p - 1,
                    tgt_word: p - 1,
                    src_span: (p, p + 1),
                    tgt_span: (p, p + 1),
                })
                .collect(),
        }
    }

    #[test]
    fn hand_evaluated_terms() {
        assert_eq!(pair_terms(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]), (2.0, 0.0));
    }

    #[test]
    fn identical_contexts_and_anchor_give_zero() {
        let m = small();
        let pairs = pair_set(&[SubwordVocab::CLS, 5, 6, 7], &[SubwordVocab::CLS, 5, 6, 7]);
        let anchor = AnchorModel::with_cached_sources(m.clone(), 1, Pooling::Average, &pairs).unwrap();
        let (t, g) = alignment_loss(&m, &anchor, &pairs, &[0, 1, 2]).unwrap();
        assert_eq!(t.total, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn drift_only_equals_reg_term() {
        let m = small();
        let pairs = pair_set(&[SubwordVocab::CLS, 5, 6], &[SubwordVocab::CLS, 5, 6]);
        let anchor = AnchorModel::with_cached_sources(m.clone(), 1, Pooling::Average, &pairs).unwrap();
        let mut moved = m.clone();
        moved.token_embedding.iter_mut().for_each(|v| *v *= 1.5);
        let (t, _) = alignment_loss(&moved, &anchor, &pairs, &[0, 1]).unwrap();
        assert_eq!(t.pull, 0.0);
        assert_eq!(t.total, t.reg);
        assert!(t.reg > 0.0);
    }

    #[test]
    fn empty_batch_errors() {
        let m = small();
        let pairs = pair_set(&[3, 5], &[3, 6]);
        let anchor = AnchorModel::new(m.clone(), 1, Pooling::Average).unwrap();
        assert!(alignment_loss(&m, &anchor, &pairs, &[]).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = small();
        let pairs = pair_set(&[3, 5, 6], &[3, 8, 9]);
        let c = AdjustConfig {
            epochs: 0,
            ..Default::default()
        };
        let (w, trace) = adjust(&m, &pairs, &c).unwrap();
        assert_eq!(w, m);
        assert!(trace.is_empty());
    }

    #[test]
    fn adjustment_is_deterministic_and_reduces_pull() {
        let m = small();
        let pairs = pair_set(&[3, 5, 6, 7], &[3, 8, 9, 10]);
        let c = AdjustConfig {
            lr: 1e-2,
            epochs: 20,
            batch_pairs: 2,
            ..Default::default()
        };
        let (a, ta) = adjust(&m, &pairs, &c).unwrap();
        let (b, tb) = adjust(&m, &pairs, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let anchor = AnchorModel::new(m.clone(), 1, Pooling::Average).unwrap();
        let all: Vec<_> = (0..pairs.len()).collect();
        let before = alignment_loss(&m, &anchor, &pairs, &all).unwrap().0;
        let after = alignment_loss(&a, &anchor, &pairs, &all).unwrap().0;
        assert!(after.pull < before.pull);
    }

    #[test]
    fn csv_header() {
        let csv = loss_trace_csv(&[LossTerms {
            pull: 1.0,
            reg: 0.5,
            total: 1.5,
        }]);
        assert_eq!(csv, "step,pull_term,reg_term,total\n0,1,0.5,1.5\n");
    }
}
