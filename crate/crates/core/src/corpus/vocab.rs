use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Marker prefixed to every word-internal subword unit.
pub const CONTINUATION: &str = "##";

/// Special units, in id order.
pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"];

/// Byte-pair-merge subword vocabulary with WordPiece-style continuation marking.
///
/// Merges are learned over unmarked surface symbols inside words; the
/// resulting units are stored in marked form (`ab` when word-initial,
/// `##ab` otherwise), exactly as they occur in the training words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    units: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    max_unit_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub subword_ids: Vec<u32>,
    /// Half-open subword ranges, one per word.
    pub word_spans: Vec<(usize, usize)>,
}

impl TokenizedSentence {
    /// Prepends `[CLS]`, shifting every span by one.
    pub fn with_cls(&self) -> TokenizedSentence {
        let mut ids = Vec::with_capacity(self.subword_ids.len() + 1);
        ids.push(SubwordVocab::CLS);
        ids.extend_from_slice(&self.subword_ids);
        TokenizedSentence {
            subword_ids: ids,
            word_spans: self.word_spans.iter().map(|&(s, e)| (s + 1, e + 1)).collect(),
        }
    }

    /// Keeps only the words whose spans end at or before `max_len`.
    pub fn truncated(&self, max_len: usize) -> TokenizedSentence {
        let spans: Vec<_> = self.word_spans.iter().copied().take_while(|&(_, e)| e <= max_len).collect();
        let end = spans.last().map_or(0, |&(_, e)| e);
        TokenizedSentence {
            subword_ids: self.subword_ids[..end].to_vec(),
            word_spans: spans,
        }
    }

    pub fn len(&self) -> usize {
        self.subword_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subword_ids.is_empty()
    }
}

fn marked(surface: &str, initial: bool) -> String {
    if initial {
        surface.to_owned()
    } else {
        format!("{CONTINUATION}{surface}")
    }
}

impl SubwordVocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const MASK: u32 = 2;
    pub const CLS: u32 = 3;
    pub const SEP: u32 = 4;

    fn from_units(units: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if index.insert(u.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary unit `{u}`")));
            }
        }
        let max_unit_chars = units
            .iter()
            .skip(SPECIALS.len())
            .map(|u| u.strip_prefix(CONTINUATION).unwrap_or(u).chars().count())
            .max()
            .unwrap_or(0);
        Ok(SubwordVocab {
            units,
            index,
            merges,
            max_unit_chars,
        })
    }

    /// Learns merges over the words of `corpus` until `vocab_size` units exist
    /// or no pair remains. Among equally frequent pairs the lexicographically
    /// smallest `(left, right)` surface pair wins. `_seed` is accepted for
    /// interface symmetry; training is fully determined by the corpus.
    pub fn train<'a, I, W>(corpus: I, vocab_size: usize, _seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = W>,
        W: IntoIterator<Item = &'a str>,
    {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for sentence in corpus {
            for w in sentence {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<String>, usize)> = freq
            .iter()
            .map(|(w, &c)| (w.chars().map(String::from).collect(), c))
            .collect();

        let mut base = BTreeSet::new();
        for (syms, _) in &words {
            for (i, s) in syms.iter().enumerate() {
                base.insert(marked(s, i == 0));
            }
        }
        let floor = SPECIALS.len() + base.len();
        if vocab_size < floor {
            return Err(Error::invalid(format!(
                "vocab_size {vocab_size} is below the {floor} units needed for the alphabet and specials"
            )));
        }

        let mut units: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut present: BTreeSet<String> = base.clone();
        units.extend(base);
        let mut merges = Vec::new();

        loop {
            let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, c) in &words {
                for w in syms.windows(2) {
                    *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
                }
            }
            let mut best: Option<((&str, &str), usize)> = None;
            for (&pair, &c) in &counts {
                if best.map_or(true, |(_, bc)| c > bc) {
                    best = Some((pair, c));
                }
            }
            let Some(((left, right), _)) = best else { break };
            let (left, right) = (left.to_owned(), right.to_owned());
            let joined = format!("{left}{right}");

            // Apply left to right, non-overlapping, collecting the marked forms produced.
            let mut produced = Vec::new();
            let mut next_words = Vec::with_capacity(words.len());
            for (syms, c) in &words {
                let mut out = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                        let form = marked(&joined, out.is_empty());
                        if !present.contains(&form) && !produced.contains(&form) {
                            produced.push(form);
                        }
                        out.push(joined.clone());
                        i += 2;
                    } else {
                        out.push(syms[i].clone());
                        i += 1;
                    }
                }
                next_words.push((out, *c));
            }
            if units.len() + produced.len() > vocab_size {
                break;
            }
            for form in produced {
                present.insert(form.clone());
                units.push(form);
            }
            merges.push((left, right));
            words = next_words;
        }

        Self::from_units(units, merges)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn unit(&self, id: u32) -> Option<&str> {
        self.units.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, unit: &str) -> Option<u32> {
        self.index.get(unit).copied()
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.index.contains_key(unit)
    }

    /// Greedy longest-match segmentation of one word. Runs of characters
    /// that no unit covers collapse into a single `[UNK]`.
    pub fn tokenize_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        let mut pos = 0;
        let mut in_unknown = false;
        let mut buf = String::new();
        while pos < chars.len() {
            let longest = self.max_unit_chars.min(chars.len() - pos);
            let mut hit = None;
            for len in (1..=longest).rev() {
                buf.clear();
                if pos > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.extend(&chars[pos..pos + len]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    if id as usize >= SPECIALS.len() {
                        hit = Some((id, len));
                        break;
                    }
                }
            }
            match hit {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                    in_unknown = false;
                }
                None => {
                    if !in_unknown {
                        out.push(Self::UNK);
                        in_unknown = true;
                    }
                    pos += 1;
                }
            }
        }
    }

    pub fn tokenize_with_spans<S: AsRef<str>>(&self, words: &[S]) -> TokenizedSentence {
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let start = ids.len();
            self.tokenize_word(w.as_ref(), &mut ids);
            if ids.len() == start {
                // empty string word
                ids.push(Self::UNK);
            }
            spans.push((start, ids.len()));
        }
        TokenizedSentence {
            subword_ids: ids,
            word_spans: spans,
        }
    }

    /// `[CLS] premise [SEP] hypothesis [SEP]`; spans cover premise words
    /// then hypothesis words.
    pub fn encode_pair<S: AsRef<str>>(&self, premise: &[S], hypothesis: &[S]) -> TokenizedSentence {
        let p = self.tokenize_with_spans(premise);
        let h = self.tokenize_with_spans(hypothesis);
        let mut ids = Vec::with_capacity(p.len() + h.len() + 3);
        ids.push(Self::CLS);
        ids.extend_from_slice(&p.subword_ids);
        ids.push(Self::SEP);
        let offset = ids.len();
        ids.extend_from_slice(&h.subword_ids);
        ids.push(Self::SEP);
        let mut spans: Vec<_> = p.word_spans.iter().map(|&(s, e)| (s + 1, e + 1)).collect();
        spans.extend(h.word_spans.iter().map(|&(s, e)| (s + offset, e + offset)));
        TokenizedSentence {
            subword_ids: ids,
            word_spans: spans,
        }
    }

    /// Surface string of a span, continuation markers removed.
    pub fn surface(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| {
                let u = self.unit(id).unwrap_or(SPECIALS[Self::UNK as usize]);
                u.strip_prefix(CONTINUATION).unwrap_or(u)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for u in &self.units {
            s.push_str(u);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let units: Vec<String> = text.lines().map(str::to_owned).collect();
        for (i, special) in SPECIALS.iter().enumerate() {
            if units.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message: format!("expected special unit {special}"),
                });
            }
        }
        if let Some(i) = units.iter().position(|u| u.is_empty()) {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "empty unit".into(),
            });
        }
        Self::from_units(units, Vec::new())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }
}
