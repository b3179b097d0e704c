//! Checks shared by the focused tests and the acceptance suite.

use rand::Rng as _;

use xling_core::adjuster::{alignment_loss, AnchorModel};
use xling_core::aligner::{alignment_error_rate, symmetrize, train_model2, AlignmentLinkSet, Direction, Heuristic};
use xling_core::corpus::synthetic::{Lexicon, LexiconSpec};
use xling_core::corpus::{make_cipher_corpus, Reorder};
use xling_core::encoder::{ContextEncoder, EncoderWeights, Pooling, StateGrads};
use xling_core::finetuner::{
    combined_loss, encode_classification, finetune, finetune_continual, FinetuneConfig, HeadKind, Replay, TaskHead,
};
use xling_core::optim::Parameters;
use xling_core::rng;
use xling_core::stats::{permutation_test, Metric};

use super::{compare, fixture, flatten, numeric_grad, small_model, GradCheck};

pub const H: f64 = 1e-5;

fn all_indices<P: Parameters>(p: &P) -> Vec<usize> {
    (0..p.parameter_count()).collect()
}

/// Backward pass of a random linear readout of every hidden state.
pub fn encoder_gradients() -> GradCheck {
    let fx = fixture(6, 11);
    let model = small_model(fx.vocab.len(), 3);
    let ids = fx.pairs.src_contexts[0].subword_ids.clone();
    let states = model.encode(&ids).unwrap();
    let mut r = rng::seeded(9);
    let weights: Vec<Vec<f64>> = states.layers.iter().map(|l| l.iter().map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let loss = |m: &EncoderWeights| {
        let s = m.encode(&ids).unwrap();
        s.layers.iter().zip(&weights).flat_map(|(h, w)| h.iter().zip(w).map(|(a, b)| a * b)).sum::<f64>()
    };

    let cache = model.forward_cached(&ids, ids.len(), None).unwrap();
    let mut upstream = StateGrads::for_states(&cache.states);
    for (l, w) in weights.iter().enumerate() {
        for p in 0..ids.len() {
            upstream.row_mut(l, p).copy_from_slice(&w[p * states.dim..(p + 1) * states.dim]);
        }
    }
    let mut grads = model.zeros_like();
    model.backward(&cache, &upstream, &mut grads);
    compare(&flatten(&grads), &numeric_grad(&model, &all_indices(&model), H, loss))
}

pub fn alignment_gradients() -> GradCheck {
    let fx = fixture(6, 11);
    let anchor_model = small_model(fx.vocab.len(), 4);
    let model = small_model(fx.vocab.len(), 5);
    let layer = anchor_model.num_states() - 1;
    let anchor = AnchorModel::new(anchor_model, layer, Pooling::Average).unwrap();
    let batch: Vec<usize> = (0..fx.pairs.len()).step_by(3).take(5).collect();

    let (terms, grads) = alignment_loss(&model, &anchor, &fx.pairs, &batch).unwrap();
    assert!(terms.pull > 0.0 && terms.reg > 0.0);
    let numeric = numeric_grad(&model, &all_indices(&model), H, |m| {
        alignment_loss(m, &anchor, &fx.pairs, &batch).unwrap().0.total
    });
    compare(&flatten(&grads), &numeric)
}

/// Encoder and head checks for the task loss plus weighted replay.
pub fn combined_gradients() -> (GradCheck, GradCheck) {
    let fx = fixture(6, 11);
    let anchor = AnchorModel::new(small_model(fx.vocab.len(), 4), 2, Pooling::Average).unwrap();
    let model = small_model(fx.vocab.len(), 5);
    let labels = vec!["high".to_owned(), "low".to_owned()];
    let head = TaskHead::init(HeadKind::PairClassification, labels, 16, 2).unwrap();
    let examples = encode_classification(&fx.vocab, &fx.lexicon.classification(4, 1), &head).unwrap();
    let batch = [0, 1, 2, 3];
    let replay_batch = [0, 4, 8];
    let replay = Replay {
        pairs: &fx.pairs,
        anchor: &anchor,
    };
    // A large weight keeps the replay term visible in the comparison.
    let alpha = 0.5;

    let (loss, grads, head_grads) = combined_loss(&model, &head, &examples, &batch, &replay, &replay_batch, alpha).unwrap();
    assert!(loss.align > 0.0);
    let numeric = numeric_grad(&model, &all_indices(&model), H, |m| {
        combined_loss(m, &head, &examples, &batch, &replay, &replay_batch, alpha).unwrap().0.total
    });
    let encoder = compare(&flatten(&grads), &numeric);
    let numeric = numeric_grad(&head, &all_indices(&head), H, |h| {
        combined_loss(&model, h, &examples, &batch, &replay, &replay_batch, alpha).unwrap().0.total
    });
    (encoder, compare(&flatten(&head_grads), &numeric))
}

/// Symmetrized AER and both NLL traces on a 500-pair cipher corpus.
pub fn aligner_gate(reorder: Reorder) -> (f64, Vec<f64>, Vec<f64>) {
    let lexicon = Lexicon::generate(&LexiconSpec::default(), 11).unwrap();
    let source = lexicon.sentences(500, 12);
    let (corpus, gold) = make_cipher_corpus(&source, &lexicon.cipher(13), reorder, 14).unwrap();
    let fwd = train_model2(&corpus, 5, Direction::Forward, 0).unwrap();
    let rev = train_model2(&corpus, 5, Direction::Reverse, 0).unwrap();
    let links: AlignmentLinkSet = fwd
        .align_corpus(&corpus)
        .iter()
        .zip(rev.align_corpus(&corpus).iter())
        .map(|(f, r)| symmetrize(f, r, Heuristic::GrowDiagFinalAnd))
        .collect();
    (alignment_error_rate(&links, &gold).unwrap(), fwd.nll_trace, rev.nll_trace)
}

pub fn non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-6)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Whether continual fine-tuning with zero replay weight reproduces plain
/// fine-tuning bit for bit (model, head and loss trace), and whether a
/// nonzero weight changes the model.
pub fn zero_alpha_identity() -> (bool, bool) {
    let fx = fixture(20, 2);
    let model = small_model(fx.vocab.len(), 1);
    let anchor = AnchorModel::with_cached_sources(model.clone(), 2, Pooling::Average, &fx.pairs).unwrap();
    let labels = vec!["high".to_owned(), "low".to_owned()];
    let head = TaskHead::init(HeadKind::PairClassification, labels, 16, 7).unwrap();
    let data = encode_classification(&fx.vocab, &fx.lexicon.classification(40, 3), &head).unwrap();
    let config = FinetuneConfig {
        epochs: 2,
        main_batch: 8,
        replay_batch: 4,
        alpha: 0.0,
        seed: 13,
        ..FinetuneConfig::default()
    };
    let plain = finetune(&model, &head, &data, &config).unwrap();
    let cont = finetune_continual(&model, &head, &data, &fx.pairs, &anchor, &config).unwrap();
    let identical = bits(&flatten(&plain.model)) == bits(&flatten(&cont.model))
        && bits(&flatten(&plain.head)) == bits(&flatten(&cont.head))
        && bits(&plain.loss_trace) == bits(&cont.loss_trace);
    let mixed = finetune_continual(&model, &head, &data, &fx.pairs, &anchor, &FinetuneConfig { alpha: 0.01, ..config }).unwrap();
    (identical, bits(&flatten(&plain.model)) != bits(&flatten(&mixed.model)))
}

/// Largest gap between the empirical CDF of `p` and the uniform CDF.
pub fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Permutation-test p-values for exchangeable system pairs (both correct
/// with probability 0.7 on 1000 binary examples). Smaller sets make exact
/// metric ties common enough that the atom at p = 1 alone shifts the KS
/// distance by several hundredths.
pub fn null_p_values(reps: u64, iterations: usize) -> Vec<f64> {
    let mut r = rng::seeded(2024);
    let n = 1000;
    (0..reps)
        .map(|rep| {
            let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
            let mut draw = |g: usize| if r.gen_bool(0.7) { g } else { 1 - g };
            let a: Vec<usize> = gold.iter().map(|&g| draw(g)).collect();
            let b: Vec<usize> = gold.iter().map(|&g| draw(g)).collect();
            permutation_test(&a, &b, &gold, Metric::Accuracy, iterations, rep).unwrap().p
        })
        .collect()
}
