use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};

use super::{AlignmentLinkSet, Links};

pub const NULL_WORD: &str = "<NULL>";

/// Probability used for unseen (conditioning, generated) word pairs.
const UNKNOWN_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Target words are generated from source words.
    Forward,
    /// Source words are generated from target words.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Model2Options {
    pub iterations: usize,
    pub direction: Direction,
    pub initial_lambda: f64,
    pub p0: f64,
    pub lambda_step: f64,
    pub update_lambda: bool,
}

impl Default for Model2Options {
    fn default() -> Self {
        Model2Options {
            iterations: 5,
            direction: Direction::Forward,
            initial_lambda: 4.0,
            p0: 0.08,
            lambda_step: 1.0,
            update_lambda: true,
        }
    }
}

/// Translation table, diagonal tension and null probability.
///
/// Rows are indexed by the conditioning word (id 0 is NULL); each row is a
/// distribution over generated words.
#[derive(Debug, Clone, PartialEq)]
pub struct Model2Params {
    pub direction: Direction,
    pub lambda: f64,
    pub p0: f64,
    cond_words: Vec<String>,
    cond_index: HashMap<String, u32>,
    gen_words: Vec<String>,
    gen_index: HashMap<String, u32>,
    rows: Vec<BTreeMap<u32, f64>>,
    /// Corpus negative log-likelihood before each EM iteration and after the last.
    pub nll_trace: Vec<f64>,
}

/// `|(i+1)/n − (j+1)/m|` for conditioning position `i` of `n`, generated position `j` of `m`.
#[inline]
fn diag_distance(i: usize, j: usize, n: usize, m: usize) -> f64 {
    ((i + 1) as f64 / n as f64 - (j + 1) as f64 / m as f64).abs()
}

struct Indexed {
    cond: Vec<Vec<u32>>,
    gen: Vec<Vec<u32>>,
}

fn intern(words: &[String], index: &mut HashMap<String, u32>, list: &mut Vec<String>) -> Vec<u32> {
    words
        .iter()
        .map(|w| {
            *index.entry(w.clone()).or_insert_with(|| {
                list.push(w.clone());
                (list.len() - 1) as u32
            })
        })
        .collect()
}

fn oriented(pair: &SentencePair, direction: Direction) -> (&[String], &[String]) {
    match direction {
        Direction::Forward => (&pair.src, &pair.tgt),
        Direction::Reverse => (&pair.tgt, &pair.src),
    }
}

impl Model2Options {
    pub fn train(&self, corpus: &ParallelCorpus, _seed: u64) -> Result<Model2Params> {
        if self.iterations == 0 {
            return Err(Error::invalid("model 2 training needs at least one iteration"));
        }
        if corpus.is_empty() {
            return Err(Error::invalid("cannot train an aligner on an empty corpus"));
        }
        if !(0.0..1.0).contains(&self.p0) || self.initial_lambda < 0.0 {
            return Err(Error::invalid("p0 must lie in [0,1) and lambda must be ≥ 0"));
        }

        let mut cond_words = vec![NULL_WORD.to_owned()];
        let mut cond_index = HashMap::from([(NULL_WORD.to_owned(), 0u32)]);
        let mut gen_words = Vec::new();
        let mut gen_index = HashMap::new();
        let mut data = Indexed {
            cond: Vec::with_capacity(corpus.len()),
            gen: Vec::with_capacity(corpus.len()),
        };
        for pair in &corpus.pairs {
            let (c, g) = oriented(pair, self.direction);
            data.cond.push(intern(c, &mut cond_index, &mut cond_words));
            data.gen.push(intern(g, &mut gen_index, &mut gen_words));
        }

        // Uniform over co-occurring generated words; NULL row over all of them.
        let mut rows: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); cond_words.len()];
        for (c, g) in data.cond.iter().zip(&data.gen) {
            for &gw in g {
                rows[0].insert(gw, 1.0);
                for &cw in c {
                    rows[cw as usize].insert(gw, 1.0);
                }
            }
        }
        for row in &mut rows {
            let k = row.len() as f64;
            row.values_mut().for_each(|p| *p = 1.0 / k);
        }

        let mut params = Model2Params {
            direction: self.direction,
            lambda: self.initial_lambda,
            p0: self.p0,
            cond_words,
            cond_index,
            gen_words,
            gen_index,
            rows,
            nll_trace: Vec::with_capacity(self.iterations + 1),
        };

        for _ in 0..self.iterations {
            let stats = params.expectation(&data, true);
            params.nll_trace.push(stats.nll);
            // M-step: renormalize expected counts row by row.
            for (row, counts) in params.rows.iter_mut().zip(stats.counts) {
                let total: f64 = counts.values().sum();
                if total > 0.0 {
                    for (g, p) in row.iter_mut() {
                        *p = counts.get(g).copied().unwrap_or(0.0) / total;
                    }
                }
            }
            if self.update_lambda && stats.tokens > 0.0 {
                params.lambda = (params.lambda + self.lambda_step * stats.lambda_grad / stats.tokens).max(0.0);
            }
        }
        let final_nll = params.expectation(&data, false).nll;
        params.nll_trace.push(final_nll);
        Ok(params)
    }
}

struct Expectation {
    nll: f64,
    counts: Vec<BTreeMap<u32, f64>>,
    lambda_grad: f64,
    tokens: f64,
}

impl Model2Params {
    #[inline]
    fn prob(&self, cond: u32, gen: u32) -> f64 {
        self.rows[cond as usize].get(&gen).copied().unwrap_or(0.0)
    }

    fn expectation(&self, data: &Indexed, collect: bool) -> Expectation {
        let mut counts: Vec<BTreeMap<u32, f64>> = if collect {
            vec![BTreeMap::new(); self.rows.len()]
        } else {
            Vec::new()
        };
        let (mut nll, mut grad, mut tokens) = (0.0, 0.0, 0.0);
        let mut weights = Vec::new();
        for (c, g) in data.cond.iter().zip(&data.gen) {
            let (n, m) = (c.len(), g.len());
            for (j, &gw) in g.iter().enumerate() {
                weights.clear();
                let mut z = 0.0;
                for i in 0..n {
                    let w = (-self.lambda * diag_distance(i, j, n, m)).exp();
                    weights.push(w);
                    z += w;
                }
                let null = self.p0 * self.prob(0, gw);
                let mut total = null;
                let mut expected_model_d = 0.0;
                for (i, w) in weights.iter_mut().enumerate() {
                    let prior = *w / z;
                    expected_model_d += prior * diag_distance(i, j, n, m);
                    *w = (1.0 - self.p0) * prior * self.prob(c[i], gw);
                    total += *w;
                }
                let total = total.max(f64::MIN_POSITIVE);
                nll -= total.ln();
                tokens += 1.0;
                if collect {
                    let post_null = null / total;
                    *counts[0].entry(gw).or_default() += post_null;
                    let mut expected_post_d = 0.0;
                    for (i, &w) in weights.iter().enumerate() {
                        let post = w / total;
                        expected_post_d += post * diag_distance(i, j, n, m);
                        *counts[c[i] as usize].entry(gw).or_default() += post;
                    }
                    grad += (1.0 - post_null) * expected_model_d - expected_post_d;
                }
            }
        }
        Expectation {
            nll,
            counts,
            lambda_grad: grad,
            tokens,
        }
    }

    /// Translation probability of `generated` given `conditioning`, with the
    /// unknown-pair floor applied.
    pub fn translation_prob(&self, conditioning: &str, generated: &str) -> f64 {
        let c = if conditioning == NULL_WORD {
            Some(0)
        } else {
            self.cond_index.get(conditioning).copied()
        };
        let p = match (c, self.gen_index.get(generated)) {
            (Some(c), Some(&g)) => self.prob(c, g),
            _ => 0.0,
        };
        p.max(UNKNOWN_FLOOR)
    }

    /// Most probable generated word for `conditioning`, ties to the lexicographically smallest.
    pub fn best_translation(&self, conditioning: &str) -> Option<(&str, f64)> {
        let c = *self.cond_index.get(conditioning)?;
        let mut best: Option<(&str, f64)> = None;
        for (&g, &p) in &self.rows[c as usize] {
            let w = self.gen_words[g as usize].as_str();
            let better = match best {
                None => true,
                Some((bw, bp)) => p > bp || (p == bp && w < bw),
            };
            if better {
                best = Some((w, p));
            }
        }
        best
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_deviation(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| (r.values().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_prob(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.values().copied()).fold(f64::INFINITY, f64::min)
    }

    /// Builds parameters directly from a table of `(conditioning, generated) → prob`.
    pub fn from_table<'a>(
        direction: Direction,
        lambda: f64,
        p0: f64,
        table: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
    ) -> Self {
        let mut cond_words = vec![NULL_WORD.to_owned()];
        let mut cond_index = HashMap::from([(NULL_WORD.to_owned(), 0u32)]);
        let mut gen_words = Vec::new();
        let mut gen_index = HashMap::new();
        let mut rows: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new()];
        for (c, g, p) in table {
            let ci = if c == NULL_WORD {
                0
            } else {
                intern(&[c.to_owned()], &mut cond_index, &mut cond_words)[0]
            };
            let gi = intern(&[g.to_owned()], &mut gen_index, &mut gen_words)[0];
            if rows.len() <= ci as usize {
                rows.resize(ci as usize + 1, BTreeMap::new());
            }
            rows[ci as usize].insert(gi, p);
        }
        rows.resize(cond_words.len(), BTreeMap::new());
        Model2Params {
            direction,
            lambda,
            p0,
            cond_words,
            cond_index,
            gen_words,
            gen_index,
            rows,
            nll_trace: Vec::new(),
        }
    }

    /// Tab-separated dump: a `#lambda=…\tp0=…\tdirection=…` header, then
    /// `conditioning<TAB>generated<TAB>probability` rows in sorted order.
    pub fn to_dump(&self) -> String {
        let dir = match self.direction {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        };
        let mut out = format!("#lambda={}\tp0={}\tdirection={}\n", self.lambda, self.p0, dir);
        let mut rows: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for (c, row) in self.rows.iter().enumerate() {
            for (&g, &p) in row {
                rows.insert((&self.cond_words[c], &self.gen_words[g as usize]), p);
            }
        }
        for ((c, g), p) in rows {
            let _ = writeln!(out, "{c}\t{g}\t{p}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_dump())?;
        Ok(())
    }

    pub fn parse_dump(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: &str| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message: message.to_owned(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut lambda = None;
        let mut p0 = None;
        let mut direction = Direction::Forward;
        for field in header.trim_start_matches('#').split('\t') {
            match field.split_once('=') {
                Some(("lambda", v)) => lambda = v.parse().ok(),
                Some(("p0", v)) => p0 = v.parse().ok(),
                Some(("direction", "reverse")) => direction = Direction::Reverse,
                _ => {}
            }
        }
        let (Some(lambda), Some(p0)) = (lambda, p0) else {
            return Err(err(1, "header must carry lambda and p0"));
        };
        let mut table = Vec::new();
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let p = cols.get(2).and_then(|p| p.parse::<f64>().ok());
            match (cols.len(), p) {
                (3, Some(p)) => table.push((cols[0], cols[1], p)),
                _ => return Err(err(n + 2, "expected conditioning<TAB>generated<TAB>probability")),
            }
        }
        Ok(Self::from_table(direction, lambda, p0, table))
    }
}

pub fn train_model2(corpus: &ParallelCorpus, iterations: usize, direction: Direction, seed: u64) -> Result<Model2Params> {
    Model2Options {
        iterations,
        direction,
        ..Default::default()
    }
    .train(corpus, seed)
}

/// Links each generated word to its most probable conditioning position,
/// or leaves it unlinked when NULL is strictly more probable. Links are
/// returned as `(src, tgt)` of the original pair regardless of direction.
pub fn viterbi_align(params: &Model2Params, pair: &SentencePair) -> Links {
    let (cond, gen) = oriented(pair, params.direction);
    let (n, m) = (cond.len(), gen.len());
    let mut links = Links::new();
    for (j, g) in gen.iter().enumerate() {
        let z: f64 = (0..n).map(|i| (-params.lambda * diag_distance(i, j, n, m)).exp()).sum();
        let null = params.p0 * params.translation_prob(NULL_WORD, g);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in cond.iter().enumerate() {
            let prior = (-params.lambda * diag_distance(i, j, n, m)).exp() / z;
            let score = (1.0 - params.p0) * prior * params.translation_prob(c, g);
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        if let Some((i, score)) = best {
            if score >= null {
                links.insert(match params.direction {
                    Direction::Forward => (i, j),
                    Direction::Reverse => (j, i),
                });
            }
        }
    }
    links
}

impl Model2Params {
    pub fn align_corpus(&self, corpus: &ParallelCorpus) -> AlignmentLinkSet {
        corpus.pairs.iter().map(|p| viterbi_align(self, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_parallel;

    fn corpus(text: &str) -> ParallelCorpus {
        parse_parallel(text, Path::new("mem")).unwrap()
    }

    fn pair(src: &str, tgt: &str) -> SentencePair {
        SentencePair {
            id: 0,
            src: src.split_whitespace().map(String::from).collect(),
            tgt: tgt.split_whitespace().map(String::from).collect(),
        }
    }

    #[test]
    fn single_word_corpus() {
        let c = corpus(&"a ||| x\n".repeat(10));
        let p = train_model2(&c, 5, Direction::Forward, 0).unwrap();
        let (w, prob) = p.best_translation("a").unwrap();
        assert_eq!(w, "x");
        assert!(prob > 0.9);
    }

    #[test]
    fn shared_word_resolves_to_shared_translation() {
        let c = corpus(&"a b ||| x y\na c ||| x z\n".repeat(20));
        let p = train_model2(&c, 5, Direction::Forward, 0).unwrap();
        assert_eq!(p.best_translation("a").unwrap().0, "x");
    }

    #[test]
    fn zero_iterations_and_empty_corpus_error() {
        let c = corpus("a ||| x\n");
        assert!(train_model2(&c, 0, Direction::Forward, 0).is_err());
        assert!(train_model2(&ParallelCorpus::default(), 3, Direction::Forward, 0).is_err());
    }

    #[test]
    fn identity_corpus_aligns_diagonally() {
        let c = corpus(&"a b ||| a b\nb a ||| b a\na ||| a\n".repeat(5));
        let p = train_model2(&c, 5, Direction::Forward, 0).unwrap();
        let links = viterbi_align(&p, &pair("a b", "a b"));
        assert_eq!(links, [(0, 0), (1, 1)].into_iter().collect());
    }

    #[test]
    fn uniform_table_large_lambda_is_diagonal() {
        let words = ["a", "b", "c"];
        let targets = ["x", "y", "z"];
        let mut table = Vec::new();
        for w in words {
            for t in targets {
                table.push((w, t, 1.0 / 3.0));
            }
        }
        for t in targets {
            table.push((NULL_WORD, t, 1.0 / 3.0));
        }
        let p = Model2Params::from_table(Direction::Forward, 50.0, 0.08, table);
        let links = viterbi_align(&p, &pair("a b c", "x y z"));
        assert_eq!(links, [(0, 0), (1, 1), (2, 2)].into_iter().collect());
    }

    #[test]
    fn dominant_null_gives_no_links() {
        // NULL mass 0.99·0.5 against at most 0.01·1·0.5 for any source cell.
        let table = vec![("a", "x", 0.5), ("b", "y", 0.5), (NULL_WORD, "x", 0.5), (NULL_WORD, "y", 0.5)];
        let p = Model2Params::from_table(Direction::Forward, 4.0, 0.99, table);
        assert!(viterbi_align(&p, &pair("a b", "x y")).is_empty());
    }

    #[test]
    fn reverse_direction_reports_source_target_links() {
        let c = corpus(&"a b c ||| x y z\n".repeat(3));
        let p = train_model2(&c, 3, Direction::Reverse, 0).unwrap();
        for (i, j) in viterbi_align(&p, &c.pairs[0]) {
            assert!(i < 3 && j < 3);
        }
    }

    #[test]
    fn em_is_monotone_and_rows_normalized() {
        let text = "a b c ||| x y z\nb c ||| y z\na c d ||| x z w\nd a ||| w x\nc ||| z\n".repeat(4);
        let c = corpus(&text);
        let p = train_model2(&c, 8, Direction::Forward, 0).unwrap();
        for w in p.nll_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{:?}", p.nll_trace);
        }
        assert!(p.max_row_deviation() < 1e-9);
        assert!(p.min_prob() >= 0.0);
    }

    #[test]
    fn dump_roundtrip_preserves_alignments() {
        let c = corpus(&"a b ||| x y\nb c ||| y z\n".repeat(3));
        let p = train_model2(&c, 4, Direction::Forward, 0).unwrap();
        let q = Model2Params::parse_dump(&p.to_dump(), Path::new("d")).unwrap();
        assert_eq!(q.lambda, p.lambda);
        assert_eq!(p.align_corpus(&c), q.align_corpus(&c));
    }
}
