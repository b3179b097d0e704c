use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::split_words;

/// Premise/hypothesis pair with its class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: String,
}

/// Sentence with one tag per word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplacedSide {
    Premise,
    Hypothesis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedPair {
    pub pair: LabeledPair,
    pub replaced: ReplacedSide,
}

/// Tab-separated `premise<TAB>hypothesis<TAB>label` lines.
pub fn load_labeled_pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if cols.len() != 3 {
            return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let (premise, hypothesis) = (split_words(cols[0]), split_words(cols[1]));
        if premise.is_empty() || hypothesis.is_empty() || cols[2].trim().is_empty() {
            return Err(err("empty column".into()));
        }
        out.push(LabeledPair {
            premise,
            hypothesis,
            label: cols[2].trim().to_owned(),
        });
    }
    Ok(out)
}

pub fn write_labeled_pairs(path: &Path, pairs: &[LabeledPair]) -> Result<()> {
    let mut s = String::new();
    for p in pairs {
        let _ = writeln!(s, "{}\t{}\t{}", p.premise.join(" "), p.hypothesis.join(" "), p.label);
    }
    fs::write(path, s)?;
    Ok(())
}

/// `token<TAB>tag` lines; blank lines separate sentences.
pub fn load_tagged(path: &Path) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut cur = TaggedSentence {
        words: Vec::new(),
        tags: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !cur.words.is_empty() {
                out.push(std::mem::replace(
                    &mut cur,
                    TaggedSentence {
                        words: Vec::new(),
                        tags: Vec::new(),
                    },
                ));
            }
            continue;
        }
        let Some((tok, tag)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected token<TAB>tag".into(),
            });
        };
        cur.words.push(tok.trim().to_owned());
        cur.tags.push(tag.trim().to_owned());
    }
    if !cur.words.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

pub fn write_tagged(path: &Path, sentences: &[TaggedSentence]) -> Result<()> {
    let mut s = String::new();
    for sent in sentences {
        for (w, t) in sent.words.iter().zip(&sent.tags) {
            let _ = writeln!(s, "{w}\t{t}");
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Replaces exactly one side of every target-language pair with its
/// source-language counterpart, the side chosen by a fair coin.
pub fn make_mixed_pairs(
    target: &[LabeledPair],
    source: &[LabeledPair],
    seed: u64,
) -> Result<Vec<MixedPair>> {
    if target.len() != source.len() {
        return Err(Error::invalid(format!(
            "labeled pairs ({}) and source pairs ({}) differ in length",
            target.len(),
            source.len()
        )));
    }
    let mut rng = rng::seeded(seed);
    Ok(target
        .iter()
        .zip(source)
        .map(|(t, s)| {
            let replaced = if rng.gen_bool(0.5) {
                ReplacedSide::Premise
            } else {
                ReplacedSide::Hypothesis
            };
            let pair = match replaced {
                ReplacedSide::Premise => LabeledPair {
                    premise: s.premise.clone(),
                    hypothesis: t.hypothesis.clone(),
                    label: t.label.clone(),
                },
                ReplacedSide::Hypothesis => LabeledPair {
                    premise: t.premise.clone(),
                    hypothesis: s.hypothesis.clone(),
                    label: t.label.clone(),
                },
            };
            MixedPair { pair, replaced }
        })
        .collect())
}
