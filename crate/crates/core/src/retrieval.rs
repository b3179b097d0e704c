//! Cross-lingual sentence retrieval with mean-pooled sentence embeddings.

use serde::{Deserialize, Serialize};

use crate::corpus::{SubwordVocab, SPECIALS};
use crate::encoder::{ContextEncoder, HiddenStates};
use crate::error::{Error, Result};

/// Below this norm a sentence embedding is treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

fn content_positions(ids: &[u32]) -> Vec<usize> {
    let first_regular = SPECIALS.len() as u32;
    ids.iter()
        .enumerate()
        .filter(|(_, &id)| id >= first_regular || id == SubwordVocab::UNK)
        .map(|(p, _)| p)
        .collect()
}

fn trim_padding(ids: &[u32]) -> &[u32] {
    let end = ids.iter().rposition(|&id| id != SubwordVocab::PAD).map_or(0, |p| p + 1);
    &ids[..end]
}

fn mean_rows(states: &HiddenStates, layer: usize, positions: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; states.dim];
    for &p in positions {
        for (a, v) in acc.iter_mut().zip(states.row(layer, p)) {
            *a += v;
        }
    }
    let n = positions.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Sentence embeddings at every layer: the mean over non-special,
/// non-padding token vectors. Trailing padding is stripped before encoding.
pub fn sentence_embeddings<E: ContextEncoder>(model: &E, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
    let ids = trim_padding(ids);
    let positions = content_positions(ids);
    if positions.is_empty() {
        return Err(Error::invalid("sentence has no content tokens"));
    }
    let states = model.encode(ids)?;
    Ok((0..states.num_layers()).map(|l| mean_rows(&states, l, &positions)).collect())
}

pub fn sentence_embedding<E: ContextEncoder>(model: &E, ids: &[u32], layer: usize) -> Result<Vec<f64>> {
    if layer >= model.num_states() {
        return Err(Error::invalid(format!("layer {layer} ≥ {}", model.num_states())));
    }
    Ok(sentence_embeddings(model, ids)?.swap_remove(layer))
}

/// Cosine similarity; −1 if either vector is (numerically) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return -1.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// 1-based rank of the gold item for every query.
    pub ranks: Vec<usize>,
    pub mrr: f64,
    pub layer: usize,
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> f64 {
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Gold ranks by descending cosine similarity; equal similarities rank the
/// lower corpus index first.
pub fn rank_embeddings(queries: &[Vec<f64>], corpus: &[Vec<f64>], gold: &[usize]) -> Result<Vec<usize>> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty retrieval corpus"));
    }
    if gold.len() != queries.len() {
        return Err(Error::invalid(format!("{} gold indices for {} queries", gold.len(), queries.len())));
    }
    queries
        .iter()
        .zip(gold)
        .map(|(q, &g)| {
            if g >= corpus.len() {
                return Err(Error::invalid(format!("gold index {g} ≥ corpus size {}", corpus.len())));
            }
            let sims: Vec<f64> = corpus.iter().map(|c| cosine(q, c)).collect();
            let target = sims[g];
            let ahead = sims
                .iter()
                .enumerate()
                .filter(|&(k, &s)| s > target || (s == target && k < g))
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

fn all_layers<E: ContextEncoder>(model: &E, sentences: &[Vec<u32>]) -> Result<Vec<Vec<Vec<f64>>>> {
    sentences.iter().map(|s| sentence_embeddings(model, s)).collect()
}

fn result_at(queries: &[Vec<Vec<f64>>], corpus: &[Vec<Vec<f64>>], gold: &[usize], layer: usize) -> Result<RetrievalResult> {
    let q: Vec<Vec<f64>> = queries.iter().map(|e| e[layer].clone()).collect();
    let c: Vec<Vec<f64>> = corpus.iter().map(|e| e[layer].clone()).collect();
    let ranks = rank_embeddings(&q, &c, gold)?;
    Ok(RetrievalResult {
        mrr: mean_reciprocal_rank(&ranks),
        ranks,
        layer,
    })
}

pub fn xsr_rank<E: ContextEncoder>(
    model: &E,
    queries: &[Vec<u32>],
    corpus: &[Vec<u32>],
    gold: &[usize],
    layer: usize,
) -> Result<RetrievalResult> {
    if layer >= model.num_states() {
        return Err(Error::invalid(format!("layer {layer} ≥ {}", model.num_states())));
    }
    result_at(&all_layers(model, queries)?, &all_layers(model, corpus)?, gold, layer)
}

/// Per-layer MRR table plus the selected layer. Selection uses the
/// evaluation data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub per_layer: Vec<RetrievalResult>,
    pub best_layer: usize,
    pub best_mrr: f64,
    pub in_sample_selection: bool,
}

/// Evaluates every hidden state (embeddings included); equal MRRs keep the
/// lowest layer.
pub fn best_layer<E: ContextEncoder>(model: &E, queries: &[Vec<u32>], corpus: &[Vec<u32>], gold: &[usize]) -> Result<LayerSweep> {
    let (q, c) = (all_layers(model, queries)?, all_layers(model, corpus)?);
    let per_layer = (0..model.num_states())
        .map(|l| result_at(&q, &c, gold, l))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (l, r) in per_layer.iter().enumerate() {
        if r.mrr > per_layer[best].mrr {
            best = l;
        }
    }
    Ok(LayerSweep {
        best_layer: best,
        best_mrr: per_layer[best].mrr,
        per_layer,
        in_sample_selection: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ranks() {
        assert!((mean_reciprocal_rank(&[1, 2, 4]) - 0.583_333_333_333_333_4).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let c = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let q = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(rank_embeddings(&q, &c, &[0, 1]).unwrap(), vec![1, 2]);
    }

    #[test]
    fn zero_vectors_rank_last() {
        let c = vec![vec![0.0, 0.0], vec![-1.0, 0.1]];
        assert_eq!(rank_embeddings(&[vec![1.0, 0.0]], &c, &[0]).unwrap(), vec![2]);
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 0.0]), -1.0);
    }

    #[test]
    fn gold_out_of_range_errors() {
        assert!(rank_embeddings(&[vec![1.0]], &[vec![1.0]], &[1]).is_err());
    }
}
