//! Task-head fine-tuning, optionally interleaved with replayed alignment
//! batches, and the classification / tagging evaluators.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::adjuster::{alignment_loss_into, AnchorModel};
use crate::aligner::WordPairSet;
use crate::corpus::{LabeledPair, SubwordVocab, TaggedSentence};
use crate::encoder::{EncoderWeights, StateGrads};
use crate::encoder::ops;
use crate::error::{Error, Result};
use crate::optim::{round_f32, Adam, AdamConfig, Parameters};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Reads the first-position (`[CLS]`) vector of `[CLS] p [SEP] h [SEP]`.
    PairClassification,
    /// Reads the first subword of every word.
    TokenTagging,
}

/// Linear map from last-layer states to label logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHead {
    pub kind: HeadKind,
    pub labels: Vec<String>,
    pub model_dim: usize,
    /// `model_dim × labels`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TaskHead {
    pub fn zeros(kind: HeadKind, labels: Vec<String>, model_dim: usize) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::invalid(format!("a task head needs ≥ 2 labels, got {}", labels.len())));
        }
        let n = labels.len();
        Ok(TaskHead {
            kind,
            labels,
            model_dim,
            weight: vec![0.0; model_dim * n],
            bias: vec![0.0; n],
        })
    }

    pub fn init(kind: HeadKind, labels: Vec<String>, model_dim: usize, seed: u64) -> Result<Self> {
        let mut head = Self::zeros(kind, labels, model_dim)?;
        let limit = (6.0 / (model_dim + head.num_labels()) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let mut r = rng::substream(seed ^ 0x4845_4144, rng::streams::INIT);
        head.weight.iter_mut().for_each(|w| *w = round_f32(dist.sample(&mut r)));
        Ok(head)
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = ops::matmul(h, &self.weight, 1, self.model_dim, self.num_labels());
        ops::add_assign(&mut z, &self.bias);
        z
    }

    /// Argmax label; equal logits resolve to the lowest id.
    pub fn predict(&self, h: &[f64]) -> usize {
        let z = self.logits(h);
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

impl Parameters for TaskHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// One encoded input with the positions the head reads and their gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskExample {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn encode_classification(vocab: &SubwordVocab, data: &[LabeledPair], head: &TaskHead) -> Result<Vec<TaskExample>> {
    data.iter()
        .enumerate()
        .map(|(i, p)| {
            let label = head
                .label_id(&p.label)
                .ok_or_else(|| Error::invalid(format!("example {i}: unknown label `{}`", p.label)))?;
            Ok(TaskExample {
                ids: vocab.encode_pair(&p.premise, &p.hypothesis).subword_ids,
                positions: vec![0],
                labels: vec![label],
            })
        })
        .collect()
}

pub fn encode_tagging(vocab: &SubwordVocab, data: &[TaggedSentence], head: &TaskHead) -> Result<Vec<TaskExample>> {
    data.iter()
        .enumerate()
        .map(|(i, s)| {
            let tok = vocab.tokenize_with_spans(&s.words).with_cls();
            let labels = s
                .tags
                .iter()
                .map(|t| {
                    head.label_id(t)
                        .ok_or_else(|| Error::invalid(format!("sentence {i}: unknown tag `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TaskExample {
                ids: tok.subword_ids,
                positions: tok.word_spans.iter().map(|s| s.0).collect(),
                labels,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub main_batch: usize,
    pub replay_batch: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 5e-4,
            epochs: 2,
            main_batch: 32,
            replay_batch: 16,
            alpha: 0.01,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("finetune lr must be > 0, got {}", self.lr)));
        }
        if self.main_batch == 0 || self.replay_batch == 0 {
            return Err(Error::Config("finetune batch sizes must be ≥ 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub model: EncoderWeights,
    pub head: TaskHead,
    /// Combined loss of every update.
    pub loss_trace: Vec<f64>,
}

fn check_examples(head: &TaskHead, data: &[TaskExample]) -> Result<()> {
    for (i, ex) in data.iter().enumerate() {
        if ex.positions.len() != ex.labels.len() || ex.positions.is_empty() {
            return Err(Error::invalid(format!("example {i}: positions and labels disagree")));
        }
        if let Some(&bad) = ex.labels.iter().find(|&&l| l >= head.num_labels()) {
            return Err(Error::invalid(format!(
                "example {i}: label {bad} outside head range 0..{}",
                head.num_labels()
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over every labelled position of `data[batch]`; the
/// gradient of `scale × loss` is accumulated into the two gradient buffers.
pub fn target_loss_into(
    model: &EncoderWeights,
    head: &TaskHead,
    data: &[TaskExample],
    batch: &[usize],
    scale: f64,
    grads: &mut EncoderWeights,
    head_grads: &mut TaskHead,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<f64> {
    let count: usize = batch.iter().map(|&b| data[b].labels.len()).sum();
    if count == 0 {
        return Err(Error::invalid("empty task batch"));
    }
    let norm = 1.0 / count as f64;
    let (d, k) = (head.model_dim, head.num_labels());
    let top = model.config.layers;
    let mut loss = 0.0;
    for &b in batch {
        let ex = &data[b];
        let cache = model.forward_cached(&ex.ids, ex.ids.len(), dropout_rng.as_deref_mut())?;
        let mut upstream = StateGrads::for_states(&cache.states);
        for (&pos, &label) in ex.positions.iter().zip(&ex.labels) {
            let h = cache.states.row(top, pos);
            let z = head.logits(h);
            let lse = ops::log_sum_exp(&z);
            loss += lse - z[label];
            let mut dz: Vec<f64> = z.iter().map(|&v| (v - lse).exp() * norm * scale).collect();
            dz[label] -= norm * scale;
            ops::add_assign(&mut head_grads.bias, &dz);
            ops::matmul_at_b_acc(&mut head_grads.weight, h, &dz, 1, d, k);
            let dh = ops::matmul_a_bt(&dz, &head.weight, 1, k, d);
            ops::add_assign(upstream.row_mut(top, pos), &dh);
        }
        model.backward(&cache, &upstream, grads);
    }
    Ok(loss * norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedLoss {
    pub target: f64,
    pub align: f64,
    pub total: f64,
}

pub struct Replay<'a> {
    pub pairs: &'a WordPairSet,
    pub anchor: &'a AnchorModel,
}

/// `L_target + α·L_align` on one main batch and one replay batch, with
/// gradients for the encoder and the head.
pub fn combined_loss(
    model: &EncoderWeights,
    head: &TaskHead,
    data: &[TaskExample],
    batch: &[usize],
    replay: &Replay,
    replay_batch: &[usize],
    alpha: f64,
) -> Result<(CombinedLoss, EncoderWeights, TaskHead)> {
    let mut grads = model.zeros_like();
    let mut head_grads = TaskHead::zeros(head.kind, head.labels.clone(), head.model_dim)?;
    let target = target_loss_into(model, head, data, batch, 1.0, &mut grads, &mut head_grads, None)?;
    let align = alignment_loss_into(model, replay.anchor, replay.pairs, replay_batch, alpha, &mut grads, None)?.total;
    Ok((
        CombinedLoss {
            target,
            align,
            total: target + alpha * align,
        },
        grads,
        head_grads,
    ))
}

/// Plain fine-tuning on the task loss.
pub fn finetune(model: &EncoderWeights, head: &TaskHead, data: &[TaskExample], config: &FinetuneConfig) -> Result<FinetuneOutcome> {
    train(model, head, data, None, config)
}

/// Fine-tuning with replay: after each main batch a replay batch of aligned
/// pairs is drawn from its own stream and `α·L_align` joins the update.
/// With `α = 0` no replay is drawn and the result equals [`finetune`].
pub fn finetune_continual(
    model: &EncoderWeights,
    head: &TaskHead,
    data: &[TaskExample],
    pairs: &WordPairSet,
    anchor: &AnchorModel,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if config.alpha > 0.0 && pairs.is_empty() {
        return Err(Error::invalid("continual fine-tuning with alpha > 0 needs aligned pairs"));
    }
    train(model, head, data, Some(Replay { pairs, anchor }), config)
}

fn train(
    model: &EncoderWeights,
    head: &TaskHead,
    data: &[TaskExample],
    replay: Option<Replay>,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    check_examples(head, data)?;
    let mut model = model.clone();
    let mut head = head.clone();
    let mut loss_trace = Vec::new();
    if config.epochs == 0 {
        return Ok(FinetuneOutcome { model, head, loss_trace });
    }
    if data.is_empty() {
        return Err(Error::invalid("no task examples to fine-tune on"));
    }
    let replay = replay.filter(|_| config.alpha > 0.0);
    let mut order_rng = rng::substream(config.seed, rng::streams::SHUFFLE);
    let mut replay_rng = rng::substream(config.seed, rng::streams::REPLAY);
    let mut dropout_rng = rng::substream(config.seed, rng::streams::DROPOUT);
    let use_dropout = model.config.dropout > 0.0;

    let shapes: Vec<usize> = model.tensors().iter().chain(&head.tensors()).map(|t| t.len()).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &shapes);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.main_batch) {
            let mut grads = model.zeros_like();
            let mut head_grads = TaskHead::zeros(head.kind, head.labels.clone(), head.model_dim)?;
            let drop = use_dropout.then_some(&mut dropout_rng);
            let mut loss = target_loss_into(&model, &head, data, batch, 1.0, &mut grads, &mut head_grads, drop)?;
            if let Some(r) = &replay {
                let n = config.replay_batch.min(r.pairs.len());
                let picks = index::sample(&mut replay_rng, r.pairs.len(), n).into_vec();
                let drop = use_dropout.then_some(&mut dropout_rng);
                let align = alignment_loss_into(&model, r.anchor, r.pairs, &picks, config.alpha, &mut grads, drop)?;
                loss += config.alpha * align.total;
            }
            loss_trace.push(loss);
            let params: Vec<&mut [f64]> = model.tensors_mut().into_iter().chain(head.tensors_mut()).collect();
            let gs: Vec<&[f64]> = grads.tensors().into_iter().chain(head_grads.tensors()).collect();
            adam.update(params, gs);
        }
    }
    Ok(FinetuneOutcome { model, head, loss_trace })
}

/// Head predictions at every labelled position of each example.
pub fn predict(model: &EncoderWeights, head: &TaskHead, data: &[TaskExample]) -> Result<Vec<Vec<usize>>> {
    let top = model.config.layers;
    data.iter()
        .map(|ex| {
            let states = model.hidden_states(&ex.ids)?;
            Ok(ex.positions.iter().map(|&p| head.predict(states.row(top, p))).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationEval {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub correct: Vec<bool>,
}

pub fn accuracy(predictions: &[usize], gold: &[usize]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64
}

/// Accuracy of the first labelled position of each example (0 on empty data).
pub fn evaluate_classification(model: &EncoderWeights, head: &TaskHead, data: &[TaskExample]) -> Result<ClassificationEval> {
    let predictions: Vec<usize> = predict(model, head, data)?.into_iter().map(|p| p[0]).collect();
    let gold: Vec<usize> = data.iter().map(|ex| ex.labels[0]).collect();
    let correct = predictions.iter().zip(&gold).map(|(p, g)| p == g).collect();
    Ok(ClassificationEval {
        accuracy: accuracy(&predictions, &gold),
        predictions,
        correct,
    })
}

/// True positives, false positives and false negatives over non-outside labels.
pub fn entity_counts(predictions: &[usize], gold: &[usize], outside: usize) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&p, &g) in predictions.iter().zip(gold) {
        if p == g {
            if g != outside {
                tp += 1;
            }
            continue;
        }
        if p != outside {
            fp += 1;
        }
        if g != outside {
            fneg += 1;
        }
    }
    (tp, fp, fneg)
}

/// `2TP / (2TP + FP + FN)`; defined as 1 when there is nothing to find and
/// nothing was predicted.
pub fn micro_f1(predictions: &[usize], gold: &[usize], outside: usize) -> f64 {
    let (tp, fp, fneg) = entity_counts(predictions, gold, outside);
    if tp + fp + fneg == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingEval {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predictions: Vec<Vec<usize>>,
}

pub fn evaluate_tagging(model: &EncoderWeights, head: &TaskHead, data: &[TaskExample], outside: usize) -> Result<TaggingEval> {
    let predictions = predict(model, head, data)?;
    let flat_pred: Vec<usize> = predictions.iter().flatten().copied().collect();
    let flat_gold: Vec<usize> = data.iter().flat_map(|ex| ex.labels.iter().copied()).collect();
    let (tp, fp, fneg) = entity_counts(&flat_pred, &flat_gold, outside);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(TaggingEval {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        f1: micro_f1(&flat_pred, &flat_gold, outside),
        predictions,
    })
}

/// `seed,example,position,gold,predicted,correct` rows for one run.
pub fn prediction_dump_csv(seed: u64, data: &[TaskExample], predictions: &[Vec<usize>]) -> String {
    let mut out = String::from("seed,example,position,gold,predicted,correct\n");
    for (i, (ex, preds)) in data.iter().zip(predictions).enumerate() {
        for (k, (&g, &p)) in ex.labels.iter().zip(preds).enumerate() {
            let _ = writeln!(out, "{seed},{i},{k},{g},{p},{}", u8::from(g == p));
        }
    }
    out
}

pub fn write_prediction_dump(path: &Path, seed: u64, data: &[TaskExample], predictions: &[Vec<usize>]) -> Result<()> {
    fs::write(path, prediction_dump_csv(seed, data, predictions))?;
    Ok(())
}
