#![allow(dead_code)]

pub mod checks;

use xling_core::aligner::{extract_word_pairs, AlignmentLinkSet, WordPairSet};
use xling_core::corpus::synthetic::{Lexicon, LexiconSpec};
use xling_core::corpus::{make_cipher_corpus, ParallelCorpus, Reorder, SubwordVocab};
use xling_core::encoder::{EncoderConfig, EncoderWeights};
use xling_core::optim::Parameters;

/// Small cipher corpus with gold links, a vocabulary over both sides and
/// every aligned pair.
pub struct Fixture {
    pub lexicon: Lexicon,
    pub corpus: ParallelCorpus,
    pub gold: AlignmentLinkSet,
    pub vocab: SubwordVocab,
    pub pairs: WordPairSet,
}

pub fn fixture(sentences: usize, seed: u64) -> Fixture {
    let lexicon = Lexicon::generate(&LexiconSpec::default(), seed).unwrap();
    let cipher = lexicon.cipher(seed + 1);
    let source = lexicon.sentences(sentences, seed + 2);
    let (corpus, gold) = make_cipher_corpus(&source, &cipher, Reorder::SwapAdjacent, seed + 3).unwrap();
    let vocab = SubwordVocab::train(
        corpus.pairs.iter().flat_map(|p| [&p.src, &p.tgt]).map(|s| s.iter().map(String::as_str)),
        160,
        0,
    )
    .unwrap();
    let pairs = extract_word_pairs(&corpus, &gold, &vocab, usize::MAX, 0).unwrap();
    Fixture {
        lexicon,
        corpus,
        gold,
        vocab,
        pairs,
    }
}

pub fn small_config(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        model_dim: 16,
        heads: 2,
        ffn_dim: 32,
        max_positions: 64,
        vocab_size,
        dropout: 0.0,
    }
}

pub fn small_model(vocab_size: usize, seed: u64) -> EncoderWeights {
    EncoderWeights::init(small_config(vocab_size), seed).unwrap()
}

/// Flat copy of every parameter.
pub fn flatten<P: Parameters>(p: &P) -> Vec<f64> {
    p.tensors().into_iter().flatten().copied().collect()
}

/// The `k`-th parameter in declared order.
pub fn param_mut<P: Parameters>(p: &mut P, mut k: usize) -> &mut f64 {
    for t in p.tensors_mut() {
        if k < t.len() {
            return &mut t[k];
        }
        k -= t.len();
    }
    panic!("parameter index out of range");
}

/// Worst relative error between analytic and central-difference gradients.
///
/// Per component the error is `|a − n| / max(|a|, |n|, floor)`, where the
/// floor is `1e-3 · max|a|` so that components that are zero up to rounding
/// do not dominate.
pub struct GradCheck {
    pub max_rel: f64,
    pub norm_rel: f64,
    pub checked: usize,
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale;
    let mut max_rel = 0.0f64;
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(floor);
        if denom > 0.0 {
            max_rel = max_rel.max((a - n).abs() / denom);
        }
        diff += (a - n).powi(2);
        sum += (a + n).powi(2);
    }
    GradCheck {
        max_rel,
        norm_rel: if sum > 0.0 { diff.sqrt() / sum.sqrt() } else { 0.0 },
        checked: analytic.len(),
    }
}

/// Central differences of `loss` over the listed parameter indices.
pub fn numeric_grad<P: Parameters + Clone>(p: &P, indices: &[usize], h: f64, loss: impl Fn(&P) -> f64) -> Vec<f64> {
    let mut work = p.clone();
    indices
        .iter()
        .map(|&k| {
            let orig = *param_mut(&mut work, k);
            *param_mut(&mut work, k) = orig + h;
            let up = loss(&work);
            *param_mut(&mut work, k) = orig - h;
            let down = loss(&work);
            *param_mut(&mut work, k) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// A few-second end-to-end configuration with both tasks enabled.
pub fn tiny_run_config() -> xling_core::pipeline::RunConfig {
    use xling_core::pipeline::{CipherData, DataConfig, RunConfig};
    let mut c = RunConfig::default();
    c.data = DataConfig::Cipher(CipherData {
        parallel_sentences: 120,
        heldout_sentences: 30,
        classification_train: 80,
        classification_test: 30,
        tagging_train: 60,
        tagging_test: 20,
        ..CipherData::default()
    });
    c.vocab_size = 120;
    c.encoder = EncoderConfig {
        layers: 1,
        model_dim: 16,
        heads: 2,
        ffn_dim: 16,
        max_positions: 64,
        vocab_size: 120,
        dropout: 0.0,
    };
    c.pretrain.steps = 20;
    c.align.max_pairs = 200;
    c.adjust.epochs = 1;
    c.finetune.epochs = 1;
    c.analysis.n_related = 60;
    c.analysis.n_unrelated = 60;
    c.analysis.bins = 8;
    c.stats.permutation_iterations = 50;
    c.seeds = vec![0, 1];
    c
}
