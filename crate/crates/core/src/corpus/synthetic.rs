//! Synthetic source language with a class-structured lexicon, and its
//! ciphered counterpart.
//!
//! Nouns, verbs and adjectives belong to semantic classes. A verb selects the
//! class of its object and an adjective agrees with its noun, so masked-token
//! pretraining can discover the classes from co-occurrence alone. Tasks built
//! on top (pair classification, noun-class tagging) depend on those classes,
//! which makes zero-shot transfer to the cipher language hinge on how well
//! the two languages' representations line up.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

use super::{Cipher, LabeledPair, TaggedSentence};

pub const OUTSIDE_TAG: &str = "O";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconSpec {
    pub classes: usize,
    pub nouns_per_class: usize,
    pub verbs_per_class: usize,
    pub adjectives_per_class: usize,
    pub determiners: usize,
    pub prepositions: usize,
}

impl Default for LexiconSpec {
    fn default() -> Self {
        LexiconSpec {
            classes: 4,
            nouns_per_class: 6,
            verbs_per_class: 3,
            adjectives_per_class: 2,
            determiners: 3,
            prepositions: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Determiner,
    Preposition,
    Adjective(usize),
    Noun(usize),
    Verb(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub classes: usize,
    entries: BTreeMap<String, Category>,
    by_category: BTreeMap<Category, Vec<String>>,
}

const SOURCE_ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const SOURCE_NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];
const TARGET_ONSETS: &[&str] = &["B", "D", "F", "G", "K", "L", "M", "N", "P", "R", "S", "T", "V", "Z"];
const TARGET_NUCLEI: &[&str] = &["A", "E", "I", "O", "U", "Y"];

fn fresh_word(rng: &mut Rng, onsets: &[&str], nuclei: &[&str], taken: &mut BTreeSet<String>) -> String {
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(onsets.choose(rng).unwrap());
            w.push_str(nuclei.choose(rng).unwrap());
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

impl Lexicon {
    pub fn generate(spec: &LexiconSpec, seed: u64) -> Result<Self> {
        if spec.classes < 2 || spec.nouns_per_class == 0 || spec.verbs_per_class == 0 || spec.determiners == 0 {
            return Err(Error::Config("lexicon needs ≥2 classes and ≥1 noun, verb and determiner".into()));
        }
        let mut rng = rng::seeded(seed);
        let mut taken = BTreeSet::new();
        let mut by_category: BTreeMap<Category, Vec<String>> = BTreeMap::new();
        let mut add = |cat: Category, count: usize, rng: &mut Rng, taken: &mut BTreeSet<String>| {
            for _ in 0..count {
                let w = fresh_word(rng, SOURCE_ONSETS, SOURCE_NUCLEI, taken);
                by_category.entry(cat).or_default().push(w);
            }
        };
        add(Category::Determiner, spec.determiners, &mut rng, &mut taken);
        add(Category::Preposition, spec.prepositions, &mut rng, &mut taken);
        for c in 0..spec.classes {
            add(Category::Noun(c), spec.nouns_per_class, &mut rng, &mut taken);
            add(Category::Verb(c), spec.verbs_per_class, &mut rng, &mut taken);
            add(Category::Adjective(c), spec.adjectives_per_class, &mut rng, &mut taken);
        }
        let entries = by_category
            .iter()
            .flat_map(|(cat, ws)| ws.iter().map(move |w| (w.clone(), *cat)))
            .collect();
        Ok(Lexicon {
            classes: spec.classes,
            entries,
            by_category,
        })
    }

    pub fn category(&self, word: &str) -> Option<Category> {
        self.entries.get(word).copied()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn pick(&self, cat: Category, rng: &mut Rng) -> String {
        self.by_category
            .get(&cat)
            .and_then(|ws| ws.choose(rng))
            .cloned()
            .unwrap_or_default()
    }

    fn noun_phrase(&self, class: usize, rng: &mut Rng, out: &mut Vec<String>) {
        out.push(self.pick(Category::Determiner, rng));
        if self.by_category.contains_key(&Category::Adjective(class)) && rng.gen_bool(0.4) {
            out.push(self.pick(Category::Adjective(class), rng));
        }
        out.push(self.pick(Category::Noun(class), rng));
    }

    /// One sentence plus the class of its object noun.
    pub fn sentence(&self, rng: &mut Rng) -> (Vec<String>, usize) {
        let subject = rng.gen_range(0..self.classes);
        let object = rng.gen_range(0..self.classes);
        let mut out = Vec::new();
        self.noun_phrase(subject, rng, &mut out);
        out.push(self.pick(Category::Verb(object), rng));
        self.noun_phrase(object, rng, &mut out);
        if self.by_category.contains_key(&Category::Preposition) && rng.gen_bool(0.3) {
            out.push(self.pick(Category::Preposition, rng));
            let c = rng.gen_range(0..self.classes);
            self.noun_phrase(c, rng, &mut out);
        }
        (out, object)
    }

    pub fn sentences(&self, n: usize, seed: u64) -> Vec<Vec<String>> {
        let mut rng = rng::seeded(seed);
        (0..n).map(|_| self.sentence(&mut rng).0).collect()
    }

    /// Pair-classification data: a premise sentence and a noun-phrase
    /// hypothesis labelled by the class group of its noun (`low` for the
    /// first half of the classes, `high` otherwise). Half of the hypotheses
    /// reuse the premise's object class.
    pub fn classification(&self, n: usize, seed: u64) -> Vec<LabeledPair> {
        let mut rng = rng::seeded(seed);
        (0..n)
            .map(|_| {
                let (premise, object) = self.sentence(&mut rng);
                let class = if rng.gen_bool(0.5) {
                    object
                } else {
                    rng.gen_range(0..self.classes)
                };
                let mut hypothesis = Vec::new();
                self.noun_phrase(class, &mut rng, &mut hypothesis);
                LabeledPair {
                    premise,
                    hypothesis,
                    label: self.class_group(class).to_owned(),
                }
            })
            .collect()
    }

    pub fn class_group(&self, class: usize) -> &'static str {
        if class < self.classes / 2 {
            "low"
        } else {
            "high"
        }
    }

    /// Noun-class tagging data; every non-noun is tagged `O`.
    pub fn tagging(&self, n: usize, seed: u64) -> Vec<TaggedSentence> {
        let mut rng = rng::seeded(seed);
        (0..n)
            .map(|_| {
                let (words, _) = self.sentence(&mut rng);
                let tags = words.iter().map(|w| self.tag(w)).collect();
                TaggedSentence { words, tags }
            })
            .collect()
    }

    pub fn tag(&self, word: &str) -> String {
        match self.category(word) {
            Some(Category::Noun(c)) => format!("C{c}"),
            _ => OUTSIDE_TAG.to_owned(),
        }
    }

    /// Bijection onto freshly generated target-alphabet words.
    pub fn cipher(&self, seed: u64) -> Cipher {
        let mut rng = rng::seeded(seed);
        let mut taken = BTreeSet::new();
        let map = self
            .entries
            .keys()
            .map(|w| (w.clone(), fresh_word(&mut rng, TARGET_ONSETS, TARGET_NUCLEI, &mut taken)))
            .collect();
        Cipher::new(map).expect("fresh words are distinct")
    }
}
