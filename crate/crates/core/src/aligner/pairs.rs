use rand::seq::index;

use crate::corpus::{ParallelCorpus, SubwordVocab, TokenizedSentence};
use crate::error::{Error, Result};
use crate::rng;

use super::AlignmentLinkSet;

/// One aligned occurrence: word `src_word` of the source sentence and word
/// `tgt_word` of the target sentence of pair `sentence`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct WordPair {
    pub sentence: usize,
    pub src_word: usize,
    pub tgt_word: usize,
    pub src_span: (usize, usize),
    pub tgt_span: (usize, usize),
}

/// Aligned occurrence pairs together with the encoder-ready contexts
/// (`[CLS]`-prefixed tokenizations) they point into.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordPairSet {
    pub src_contexts: Vec<TokenizedSentence>,
    pub tgt_contexts: Vec<TokenizedSentence>,
    pub items: Vec<WordPair>,
}

impl WordPairSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Drops items whose context would exceed `max_len` subwords.
    pub fn retain_within(&mut self, max_len: usize) {
        let (src, tgt) = (&self.src_contexts, &self.tgt_contexts);
        self.items
            .retain(|it| src[it.sentence].len() <= max_len && tgt[it.sentence].len() <= max_len);
    }

    /// Copy holding only `items[indices]`, sharing nothing mutable.
    pub fn subset(&self, indices: &[usize]) -> WordPairSet {
        WordPairSet {
            src_contexts: self.src_contexts.clone(),
            tgt_contexts: self.tgt_contexts.clone(),
            items: indices.iter().map(|&i| self.items[i]).collect(),
        }
    }
}

/// One item per link, uniformly subsampled to `max_pairs` (kept in corpus
/// order); spans are resolved against `[CLS]`-prefixed tokenizations.
pub fn extract_word_pairs(
    corpus: &ParallelCorpus,
    links: &AlignmentLinkSet,
    vocab: &SubwordVocab,
    max_pairs: usize,
    seed: u64,
) -> Result<WordPairSet> {
    if links.len() != corpus.len() {
        return Err(Error::invalid(format!(
            "alignment covers {} sentences but corpus has {}",
            links.len(),
            corpus.len()
        )));
    }
    let src_contexts: Vec<_> = corpus.pairs.iter().map(|p| vocab.tokenize_with_spans(&p.src).with_cls()).collect();
    let tgt_contexts: Vec<_> = corpus.pairs.iter().map(|p| vocab.tokenize_with_spans(&p.tgt).with_cls()).collect();

    let mut all = Vec::with_capacity(links.total_links());
    for (s, sentence_links) in links.iter().enumerate() {
        let pair = &corpus.pairs[s];
        for &(i, j) in sentence_links {
            if i >= pair.src.len() || j >= pair.tgt.len() {
                return Err(Error::LinkOutOfRange {
                    sentence: s,
                    src: i,
                    tgt: j,
                    src_len: pair.src.len(),
                    tgt_len: pair.tgt.len(),
                });
            }
            all.push(WordPair {
                sentence: s,
                src_word: i,
                tgt_word: j,
                src_span: src_contexts[s].word_spans[i],
                tgt_span: tgt_contexts[s].word_spans[j],
            });
        }
    }
    let items = if all.len() <= max_pairs {
        all
    } else {
        let mut rng = rng::substream(seed, rng::streams::SAMPLE);
        let mut keep = index::sample(&mut rng, all.len(), max_pairs).into_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| all[i]).collect()
    };
    Ok(WordPairSet {
        src_contexts,
        tgt_contexts,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligner::Links;
    use crate::corpus::parse_parallel;
    use std::path::Path;

    fn setup(n_words: usize) -> (ParallelCorpus, SubwordVocab) {
        let src: Vec<String> = (0..n_words).map(|i| format!("s{i}")).collect();
        let tgt: Vec<String> = (0..n_words).map(|i| format!("t{i}")).collect();
        let c = parse_parallel(&format!("{} ||| {}\n", src.join(" "), tgt.join(" ")), Path::new("m")).unwrap();
        let v = SubwordVocab::train(c.pairs.iter().map(|p| p.src.iter().chain(&p.tgt).map(String::as_str)), 200, 0).unwrap();
        (c, v)
    }

    fn diag(n: usize) -> AlignmentLinkSet {
        AlignmentLinkSet::new(vec![(0..n).map(|i| (i, i)).collect()])
    }

    #[test]
    fn single_link_single_item() {
        let (c, v) = setup(1);
        let set = extract_word_pairs(&c, &diag(1), &v, 10, 0).unwrap();
        assert_eq!(set.len(), 1);
        let it = set.items[0];
        assert_eq!((it.src_word, it.tgt_word), (0, 0));
        assert_eq!(it.src_span.0, 1, "span is shifted past [CLS]");
    }

    #[test]
    fn zero_max_pairs() {
        let (c, v) = setup(3);
        assert!(extract_word_pairs(&c, &diag(3), &v, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn no_subsampling_keeps_all() {
        let (c, v) = setup(10);
        let set = extract_word_pairs(&c, &diag(10), &v, 10, 7).unwrap();
        let got: Links = set.items.iter().map(|it| (it.src_word, it.tgt_word)).collect();
        assert_eq!(got, diag(10).sentence(0).clone());
    }

    #[test]
    fn subsampling_is_seeded() {
        let (c, v) = setup(10);
        let a = extract_word_pairs(&c, &diag(10), &v, 4, 1).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, extract_word_pairs(&c, &diag(10), &v, 4, 1).unwrap());
    }

    #[test]
    fn out_of_range_link_errors() {
        let (c, v) = setup(2);
        let bad = AlignmentLinkSet::new(vec![[(0, 5)].into_iter().collect()]);
        assert!(matches!(extract_word_pairs(&c, &bad, &v, 10, 0), Err(Error::LinkOutOfRange { .. })));
    }
}
