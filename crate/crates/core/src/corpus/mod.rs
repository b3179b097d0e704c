//! Parallel and task corpora, subword vocabulary, and synthetic cipher languages.

mod cipher;
pub mod synthetic;
mod task;
mod vocab;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng;

pub use cipher::{make_cipher_corpus, Cipher, Reorder};
pub use task::{
    load_labeled_pairs, load_tagged, make_mixed_pairs, write_labeled_pairs, write_tagged,
    LabeledPair, MixedPair, ReplacedSide, TaggedSentence,
};
pub use vocab::{SubwordVocab, TokenizedSentence, CONTINUATION, SPECIALS};

/// Separator between the two sides of a parallel line.
pub const PARALLEL_SEPARATOR: &str = " ||| ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub id: usize,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    /// Builds a corpus from word sequences, numbering pairs in order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Vec<String>, Vec<String>)>) -> Result<Self> {
        let mut out = Vec::new();
        for (id, (src, tgt)) in pairs.into_iter().enumerate() {
            if src.is_empty() || tgt.is_empty() {
                return Err(Error::invalid(format!("sentence pair {id} has an empty side")));
            }
            out.push(SentencePair { id, src, tgt });
        }
        Ok(ParallelCorpus { pairs: out })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_sentences(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.src.as_slice())
    }

    pub fn target_sentences(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.tgt.as_slice())
    }

    /// Swaps the two sides of every pair.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair {
                    id: p.id,
                    src: p.tgt.clone(),
                    tgt: p.src.clone(),
                })
                .collect(),
        }
    }

    /// Renumbers ids to positions, keeping order.
    pub fn renumbered(mut self) -> ParallelCorpus {
        for (i, p) in self.pairs.iter_mut().enumerate() {
            p.id = i;
        }
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.pairs {
            s.push_str(&p.src.join(" "));
            s.push_str(PARALLEL_SEPARATOR);
            s.push_str(&p.tgt.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }
}

pub fn split_words(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

/// Parses `src ||| tgt` lines. Line numbers in errors are 1-based.
pub fn parse_parallel(text: &str, origin: &Path) -> Result<ParallelCorpus> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: &str| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            message: message.to_owned(),
        };
        let Some((src, tgt)) = line.split_once(PARALLEL_SEPARATOR) else {
            return Err(err("missing ` ||| ` separator"));
        };
        if tgt.contains(PARALLEL_SEPARATOR) {
            return Err(err("more than one ` ||| ` separator"));
        }
        let (src, tgt) = (split_words(src), split_words(tgt));
        if src.is_empty() || tgt.is_empty() {
            return Err(err("empty side"));
        }
        pairs.push(SentencePair {
            id: pairs.len(),
            src,
            tgt,
        });
    }
    Ok(ParallelCorpus { pairs })
}

pub fn load_parallel(path: &Path) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path)?;
    parse_parallel(&text, path)
}

/// Uniform sample of `n` pairs without replacement, returned in corpus order.
pub fn sample_sentences(corpus: &ParallelCorpus, n: usize, seed: u64) -> Result<ParallelCorpus> {
    if n > corpus.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n} sentences from a corpus of {}",
            corpus.len()
        )));
    }
    let mut rng = rng::substream(seed, rng::streams::SAMPLE);
    let mut chosen = index::sample(&mut rng, corpus.len(), n).into_vec();
    chosen.sort_unstable();
    Ok(ParallelCorpus {
        pairs: chosen.into_iter().map(|i| corpus.pairs[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ParallelCorpus> {
        parse_parallel(text, Path::new("mem"))
    }

    #[test]
    fn parses_single_pair() {
        let c = parse("a b ||| x y\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.pairs[0].src, vec!["a", "b"]);
        assert_eq!(c.pairs[0].tgt, vec!["x", "y"]);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn malformed_separator_names_line() {
        match parse("a b | x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("a ||| b\nc |||  \n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_from_file_roundtrips_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let c = parse("a b ||| x y\nc ||| z\n").unwrap();
        c.write(&path).unwrap();
        assert_eq!(load_parallel(&path).unwrap(), c);
    }

    fn numbered(n: usize) -> ParallelCorpus {
        ParallelCorpus::from_pairs((0..n).map(|i| (vec![format!("s{i}")], vec![format!("t{i}")]))).unwrap()
    }

    #[test]
    fn sample_full_size_is_same_set() {
        let c = numbered(20);
        let s = sample_sentences(&c, 20, 3).unwrap();
        let mut ids: Vec<_> = s.pairs.iter().map(|p| p.id).collect();
        ids.sort();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn sample_zero_and_oversize() {
        let c = numbered(5);
        assert!(sample_sentences(&c, 0, 1).unwrap().is_empty());
        assert!(sample_sentences(&c, 6, 1).is_err());
    }

    #[test]
    fn sample_depends_on_seed() {
        let c = numbered(1000);
        let a = sample_sentences(&c, 500, 1).unwrap();
        let b = sample_sentences(&c, 500, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, sample_sentences(&c, 500, 1).unwrap());
    }
}
