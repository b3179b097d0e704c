//! Word alignment: IBM Model 2 with a diagonal prior, symmetrization, and
//! extraction of aligned word-occurrence pairs.

mod model2;
mod pairs;
mod symmetrize;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use model2::{train_model2, viterbi_align, Direction, Model2Options, Model2Params, NULL_WORD};
pub use pairs::{extract_word_pairs, WordPair, WordPairSet};
pub use symmetrize::{symmetrize, Heuristic};

/// `(src_index, tgt_index)` links of one sentence pair, zero-based.
pub type Links = BTreeSet<(usize, usize)>;

/// Links for every sentence pair of a corpus, in corpus order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentLinkSet {
    sentences: Vec<Links>,
}

impl AlignmentLinkSet {
    pub fn new(sentences: Vec<Links>) -> Self {
        AlignmentLinkSet { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence(&self, i: usize) -> &Links {
        &self.sentences[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Links> {
        self.sentences.iter()
    }

    pub fn total_links(&self) -> usize {
        self.sentences.iter().map(BTreeSet::len).sum()
    }

    /// Every link as `(sentence, src, tgt)`, in order.
    pub fn flat(&self) -> Vec<(usize, usize, usize)> {
        self.sentences
            .iter()
            .enumerate()
            .flat_map(|(s, links)| links.iter().map(move |&(i, j)| (s, i, j)))
            .collect()
    }

    /// Swaps source and target indices of every link.
    pub fn transposed(&self) -> Self {
        AlignmentLinkSet {
            sentences: self.sentences.iter().map(|l| l.iter().map(|&(i, j)| (j, i)).collect()).collect(),
        }
    }

    /// Pharaoh format: one line per sentence, `i-j` links separated by spaces.
    pub fn to_pharaoh(&self) -> String {
        let mut out = String::new();
        for links in &self.sentences {
            let mut first = true;
            for (i, j) in links {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{i}-{j}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_pharaoh(text: &str, origin: &Path) -> Result<Self> {
        let mut sentences = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut links = Links::new();
            for tok in line.split_whitespace() {
                let parsed = tok
                    .split_once('-')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                let Some(link) = parsed else {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: n + 1,
                        message: format!("bad link `{tok}`"),
                    });
                };
                links.insert(link);
            }
            sentences.push(links);
        }
        Ok(AlignmentLinkSet { sentences })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pharaoh())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_pharaoh(&fs::read_to_string(path)?, path)
    }
}

impl FromIterator<Links> for AlignmentLinkSet {
    fn from_iter<T: IntoIterator<Item = Links>>(iter: T) -> Self {
        AlignmentLinkSet::new(iter.into_iter().collect())
    }
}

/// `1 − 2|P∩G| / (|P|+|G|)` with every gold link treated as sure; 0 when
/// both sides are empty.
pub fn alignment_error_rate(predicted: &AlignmentLinkSet, gold: &AlignmentLinkSet) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::invalid(format!(
            "predicted covers {} sentences, gold covers {}",
            predicted.len(),
            gold.len()
        )));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (p, g) in predicted.iter().zip(gold.iter()) {
        inter += p.intersection(g).count();
        total += p.len() + g.len();
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - 2.0 * inter as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(links: &[(usize, usize)]) -> AlignmentLinkSet {
        AlignmentLinkSet::new(vec![links.iter().copied().collect()])
    }

    #[test]
    fn aer_cases() {
        let g = set(&[(0, 0), (1, 1)]);
        assert_eq!(alignment_error_rate(&g, &g).unwrap(), 0.0);
        assert_eq!(alignment_error_rate(&set(&[(0, 1)]), &set(&[(1, 0)])).unwrap(), 1.0);
        let p = set(&[(0, 0), (0, 1)]);
        assert!((alignment_error_rate(&p, &g).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(alignment_error_rate(&set(&[]), &set(&[])).unwrap(), 0.0);
    }

    #[test]
    fn pharaoh_roundtrip() {
        let a = AlignmentLinkSet::new(vec![
            [(0, 0), (1, 2)].into_iter().collect(),
            Links::new(),
            [(3, 1)].into_iter().collect(),
        ]);
        let text = a.to_pharaoh();
        assert_eq!(text, "0-0 1-2\n\n3-1\n");
        assert_eq!(AlignmentLinkSet::parse_pharaoh(&text, Path::new("x")).unwrap(), a);
        assert!(AlignmentLinkSet::parse_pharaoh("0-x\n", Path::new("x")).is_err());
    }
}
