use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::aligner::AlignmentLinkSet;
use crate::error::{Error, Result};
use crate::rng;

use super::ParallelCorpus;

/// Word bijection from the source vocabulary onto a synthetic target vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cipher {
    map: BTreeMap<String, String>,
}

impl Cipher {
    /// Fails if two source words map to the same target word.
    pub fn new(map: BTreeMap<String, String>) -> Result<Self> {
        let images: BTreeSet<_> = map.values().collect();
        if images.len() != map.len() {
            return Err(Error::invalid("cipher is not injective"));
        }
        Ok(Cipher { map })
    }

    pub fn identity<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Cipher {
            map: words.into_iter().map(|w| (w.to_owned(), w.to_owned())).collect(),
        }
    }

    pub fn apply(&self, word: &str) -> Result<&str> {
        self.map
            .get(word)
            .map(String::as_str)
            .ok_or_else(|| Error::OutsideCipher(word.to_owned()))
    }

    pub fn apply_sentence(&self, words: &[String]) -> Result<Vec<String>> {
        words.iter().map(|w| self.apply(w).map(str::to_owned)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Local word-order rule applied to the ciphered side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reorder {
    None,
    /// Swap positions (0,1), (2,3), ... unconditionally.
    SwapAdjacent,
    /// Swap each of the pairs (0,1), (2,3), ... with probability `prob`.
    RandomAdjacent { prob: f64 },
}

impl Reorder {
    /// `perm[k]` is the source position placed at target position `k`.
    fn permutation(&self, len: usize, rng: &mut rng::Rng) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..len).collect();
        let mut k = 0;
        while k + 1 < len {
            let swap = match *self {
                Reorder::None => false,
                Reorder::SwapAdjacent => true,
                Reorder::RandomAdjacent { prob } => rng.gen_bool(prob.clamp(0.0, 1.0)),
            };
            if swap {
                perm.swap(k, k + 1);
            }
            k += 2;
        }
        perm
    }
}

/// Builds a parallel corpus whose target side is the ciphered, optionally
/// reordered source. Returns the corpus together with its gold alignment.
pub fn make_cipher_corpus(
    source: &[Vec<String>],
    cipher: &Cipher,
    reorder: Reorder,
    seed: u64,
) -> Result<(ParallelCorpus, AlignmentLinkSet)> {
    let mut rng = rng::seeded(seed);
    let mut pairs = Vec::with_capacity(source.len());
    let mut gold = Vec::with_capacity(source.len());
    for sentence in source {
        let ciphered = cipher.apply_sentence(sentence)?;
        let perm = reorder.permutation(sentence.len(), &mut rng);
        let tgt: Vec<String> = perm.iter().map(|&i| ciphered[i].clone()).collect();
        gold.push(perm.iter().enumerate().map(|(k, &i)| (i, k)).collect());
        pairs.push((sentence.clone(), tgt));
    }
    Ok((ParallelCorpus::from_pairs(pairs)?, AlignmentLinkSet::new(gold)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn ab_cipher() -> Cipher {
        Cipher::new([("a", "x"), ("b", "y")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()).unwrap()
    }

    #[test]
    fn identity_cipher_is_diagonal() {
        let src = vec![words("a b c")];
        let c = Cipher::identity(["a", "b", "c"]);
        let (corpus, gold) = make_cipher_corpus(&src, &c, Reorder::None, 0).unwrap();
        assert_eq!(corpus.pairs[0].tgt, src[0]);
        assert_eq!(gold.sentence(0).iter().copied().collect::<Vec<_>>(), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn cipher_maps_words() {
        let (corpus, gold) = make_cipher_corpus(&[words("a b")], &ab_cipher(), Reorder::None, 0).unwrap();
        assert_eq!(corpus.pairs[0].tgt, words("x y"));
        assert_eq!(gold.sentence(0).iter().copied().collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn swap_adjacent_reorders_and_links() {
        let (corpus, gold) = make_cipher_corpus(&[words("a b")], &ab_cipher(), Reorder::SwapAdjacent, 0).unwrap();
        assert_eq!(corpus.pairs[0].tgt, words("y x"));
        assert_eq!(gold.sentence(0).iter().copied().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn word_outside_domain_errors() {
        let err = make_cipher_corpus(&[words("a z")], &ab_cipher(), Reorder::None, 0).unwrap_err();
        assert!(matches!(err, Error::OutsideCipher(w) if w == "z"));
    }

    #[test]
    fn non_injective_cipher_rejected() {
        let map = [("a", "x"), ("b", "x")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        assert!(Cipher::new(map).is_err());
    }
}
