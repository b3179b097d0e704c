//! L2 distances between contextual vectors of related (aligned) and
//! unrelated (cross-sentence) word occurrences, their histograms, and the
//! five-scenario comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::aligner::AlignmentLinkSet;
use crate::corpus::{ParallelCorpus, SubwordVocab, TokenizedSentence};
use crate::encoder::{word_vector, ContextEncoder, HiddenStates, Pooling};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Related,
    Unrelated,
}

/// A source occurrence `(sentence, word)` and a target occurrence `(sentence, word)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrencePair {
    pub relation: Relation,
    pub src: (usize, usize),
    pub tgt: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub relation: Relation,
    pub distance: f64,
}

/// Related pairs uniformly from the links (all of them when `n_related`
/// reaches the link count), unrelated pairs as a source word of sentence i
/// against a target word of sentence j ≠ i.
pub fn sample_distance_pairs(
    corpus: &ParallelCorpus,
    links: &AlignmentLinkSet,
    n_related: usize,
    n_unrelated: usize,
    seed: u64,
) -> Result<Vec<OccurrencePair>> {
    if n_related == 0 || n_unrelated == 0 {
        return Err(Error::invalid("sample sizes must be ≥ 1"));
    }
    if corpus.len() < 2 {
        return Err(Error::invalid("unrelated pairs need at least 2 sentence pairs"));
    }
    if links.len() != corpus.len() {
        return Err(Error::invalid("links and corpus differ in sentence count"));
    }
    let mut r = rng::substream(seed, rng::streams::SAMPLE);
    let flat = links.flat();
    let chosen: Vec<usize> = if n_related >= flat.len() {
        (0..flat.len()).collect()
    } else {
        let mut v = index::sample(&mut r, flat.len(), n_related).into_vec();
        v.sort_unstable();
        v
    };
    let mut out: Vec<OccurrencePair> = chosen
        .into_iter()
        .map(|k| {
            let (s, i, j) = flat[k];
            OccurrencePair {
                relation: Relation::Related,
                src: (s, i),
                tgt: (s, j),
            }
        })
        .collect();
    let n = corpus.len();
    for _ in 0..n_unrelated {
        let i = r.gen_range(0..n);
        let j = (i + r.gen_range(1..n)) % n;
        let wi = r.gen_range(0..corpus.pairs[i].src.len());
        let wj = r.gen_range(0..corpus.pairs[j].tgt.len());
        out.push(OccurrencePair {
            relation: Relation::Unrelated,
            src: (i, wi),
            tgt: (j, wj),
        });
    }
    Ok(out)
}

/// Encoder-ready contexts for both sides of a corpus.
#[derive(Debug, Clone)]
pub struct CorpusContexts {
    pub src: Vec<TokenizedSentence>,
    pub tgt: Vec<TokenizedSentence>,
}

impl CorpusContexts {
    pub fn new(vocab: &SubwordVocab, corpus: &ParallelCorpus) -> Self {
        CorpusContexts {
            src: corpus.pairs.iter().map(|p| vocab.tokenize_with_spans(&p.src).with_cls()).collect(),
            tgt: corpus.pairs.iter().map(|p| vocab.tokenize_with_spans(&p.tgt).with_cls()).collect(),
        }
    }
}

fn encode_needed<E: ContextEncoder>(
    model: &E,
    contexts: &[TokenizedSentence],
    needed: impl Iterator<Item = usize>,
) -> Result<BTreeMap<usize, HiddenStates>> {
    let mut out = BTreeMap::new();
    for s in needed {
        if !out.contains_key(&s) {
            let ctx = contexts
                .get(s)
                .ok_or_else(|| Error::invalid(format!("sentence {s} out of range")))?;
            out.insert(s, model.encode(&ctx.subword_ids)?);
        }
    }
    Ok(out)
}

fn span_of(ctx: &TokenizedSentence, word: usize) -> Result<(usize, usize)> {
    ctx.word_spans
        .get(word)
        .copied()
        .ok_or_else(|| Error::invalid(format!("word {word} out of range")))
}

/// `‖f(a) − f(b)‖₂` with each word encoded once in its own sentence.
pub fn compute_distances<E: ContextEncoder>(
    model: &E,
    contexts: &CorpusContexts,
    sample: &[OccurrencePair],
    layer: usize,
    pooling: Pooling,
) -> Result<Vec<DistanceSample>> {
    if layer >= model.num_states() {
        return Err(Error::invalid(format!("layer {layer} ≥ {}", model.num_states())));
    }
    let src = encode_needed(model, &contexts.src, sample.iter().map(|p| p.src.0))?;
    let tgt = encode_needed(model, &contexts.tgt, sample.iter().map(|p| p.tgt.0))?;
    sample
        .iter()
        .map(|p| {
            let a = word_vector(&src[&p.src.0], span_of(&contexts.src[p.src.0], p.src.1)?, layer, pooling)?;
            let b = word_vector(&tgt[&p.tgt.0], span_of(&contexts.tgt[p.tgt.0], p.tgt.1)?, layer, pooling)?;
            let d = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            Ok(DistanceSample {
                relation: p.relation,
                distance: d,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub counts: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub edges: Vec<f64>,
    pub related: LabelStats,
    pub unrelated: LabelStats,
    pub overlap: f64,
}

impl HistogramReport {
    /// Mean unrelated distance over mean related distance.
    pub fn separation(&self) -> f64 {
        self.unrelated.mean / self.related.mean
    }
}

fn label_stats(values: &[f64], edges: &[f64]) -> LabelStats {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if hi > lo {
            (((v - lo) / (hi - lo)) * bins as f64).floor() as usize
        } else {
            0
        };
        counts[b.min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    LabelStats { counts, mean, std }
}

/// Σ over bins of the smaller normalized mass.
pub fn overlap_coefficient(a: &[usize], b: &[usize]) -> f64 {
    let (na, nb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    a.iter().zip(b).map(|(&x, &y)| (x as f64 / na).min(y as f64 / nb)).sum()
}

/// Histogram over `bins` equal-width bins spanning `[0, upper]`.
pub fn histogram_with_range(samples: &[DistanceSample], bins: usize, upper: f64) -> Result<HistogramReport> {
    if bins < 2 {
        return Err(Error::invalid("histograms need ≥ 2 bins"));
    }
    let pick = |rel| -> Vec<f64> { samples.iter().filter(|s| s.relation == rel).map(|s| s.distance).collect() };
    let (rel, unrel) = (pick(Relation::Related), pick(Relation::Unrelated));
    if rel.is_empty() || unrel.is_empty() {
        return Err(Error::invalid("histograms need samples of both relations"));
    }
    if let Some(bad) = samples.iter().find(|s| !s.distance.is_finite() || s.distance < 0.0) {
        return Err(Error::invalid(format!("invalid distance {}", bad.distance)));
    }
    let edges: Vec<f64> = (0..=bins).map(|k| upper * k as f64 / bins as f64).collect();
    let related = label_stats(&rel, &edges);
    let unrelated = label_stats(&unrel, &edges);
    let overlap = overlap_coefficient(&related.counts, &unrelated.counts);
    Ok(HistogramReport {
        edges,
        related,
        unrelated,
        overlap,
    })
}

/// Histogram with bins spanning `[0, max distance]`.
pub fn histogram_report(samples: &[DistanceSample], bins: usize) -> Result<HistogramReport> {
    let upper = samples.iter().map(|s| s.distance).fold(0.0, f64::max);
    histogram_with_range(samples, bins, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "original")]
    Original,
    #[serde(rename = "adjusted")]
    Adjusted,
    #[serde(rename = "original+finetuned")]
    OriginalFinetuned,
    #[serde(rename = "adjusted+finetuned")]
    AdjustedFinetuned,
    #[serde(rename = "adjusted+continual")]
    AdjustedContinual,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Original,
        Scenario::Adjusted,
        Scenario::OriginalFinetuned,
        Scenario::AdjustedFinetuned,
        Scenario::AdjustedContinual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Original => "original",
            Scenario::Adjusted => "adjusted",
            Scenario::OriginalFinetuned => "original+finetuned",
            Scenario::AdjustedFinetuned => "adjusted+finetuned",
            Scenario::AdjustedContinual => "adjusted+continual",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub n_related: usize,
    pub n_unrelated: usize,
    pub bins: usize,
    pub pooling: Pooling,
    /// `None` reads the last hidden state.
    pub layer: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            n_related: 2000,
            n_unrelated: 2000,
            bins: 50,
            pooling: Pooling::Average,
            layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub report: HistogramReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub scenarios: Vec<ScenarioReport>,
}

impl SuiteReport {
    pub fn get(&self, scenario: Scenario) -> Option<&HistogramReport> {
        self.scenarios.iter().find(|s| s.scenario == scenario).map(|s| &s.report)
    }
}

/// One report per scenario on the same pair sample, binned over a range
/// shared by every scenario.
pub fn scenario_suite<E: ContextEncoder>(
    models: &[(Scenario, &E)],
    contexts: &CorpusContexts,
    sample: &[OccurrencePair],
    config: &AnalysisConfig,
) -> Result<SuiteReport> {
    let missing: Vec<&str> = Scenario::ALL
        .iter()
        .filter(|s| !models.iter().any(|(m, _)| m == *s))
        .map(|s| s.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("missing scenarios: {}", missing.join(", "))));
    }
    let mut distances = Vec::new();
    for scenario in Scenario::ALL {
        let model = models.iter().find(|(s, _)| *s == scenario).unwrap().1;
        let layer = config.layer.unwrap_or(model.num_states() - 1);
        distances.push((scenario, compute_distances(model, contexts, sample, layer, config.pooling)?));
    }
    let upper = distances
        .iter()
        .flat_map(|(_, d)| d.iter().map(|s| s.distance))
        .fold(0.0, f64::max);
    let scenarios = distances
        .into_iter()
        .map(|(scenario, d)| {
            Ok(ScenarioReport {
                scenario,
                report: histogram_with_range(&d, config.bins, upper)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SuiteReport { scenarios })
}

pub fn suite_csv(suite: &SuiteReport) -> String {
    let mut out = String::from("scenario,label,bin_left,bin_right,count\n");
    for s in &suite.scenarios {
        for (label, stats) in [("related", &s.report.related), ("unrelated", &s.report.unrelated)] {
            for (b, c) in stats.counts.iter().enumerate() {
                let _ = writeln!(out, "{},{label},{},{},{c}", s.scenario, s.report.edges[b], s.report.edges[b + 1]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub related_mean: f64,
    pub related_std: f64,
    pub unrelated_mean: f64,
    pub unrelated_std: f64,
    pub overlap: f64,
}

pub fn suite_summary(suite: &SuiteReport) -> Vec<ScenarioSummary> {
    suite
        .scenarios
        .iter()
        .map(|s| ScenarioSummary {
            scenario: s.scenario,
            related_mean: s.report.related.mean,
            related_std: s.report.related.std,
            unrelated_mean: s.report.unrelated.mean,
            unrelated_std: s.report.unrelated.std,
            overlap: s.report.overlap,
        })
        .collect()
}

/// Five side-by-side panels of normalized histograms, related in blue and
/// unrelated in orange.
pub fn suite_svg(suite: &SuiteReport) -> String {
    let (pw, ph, pad) = (220.0, 160.0, 30.0);
    let width = pad + suite.scenarios.len() as f64 * (pw + pad);
    let height = ph + 2.0 * pad + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (k, s) in suite.scenarios.iter().enumerate() {
        let x0 = pad + k as f64 * (pw + pad);
        let y0 = pad;
        let r = &s.report;
        let bins = r.related.counts.len();
        let mass = |c: &[usize]| -> Vec<f64> {
            let n = c.iter().sum::<usize>().max(1) as f64;
            c.iter().map(|&v| v as f64 / n).collect()
        };
        let (a, b) = (mass(&r.related.counts), mass(&r.unrelated.counts));
        let top = a.iter().chain(&b).fold(1e-12, |m: f64, &v| m.max(v));
        let bw = pw / bins as f64;
        let _ = writeln!(out, r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
        for (series, color) in [(&a, "#1f77b4"), (&b, "#ff7f0e")] {
            for (i, &m) in series.iter().enumerate() {
                let h = ph * m / top;
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                    x0 + i as f64 * bw,
                    y0 + ph - h,
                    bw,
                    h
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{} (overlap {:.3})</text>"#,
            x0 + pw / 2.0,
            y0 - 8.0,
            s.scenario,
            r.overlap
        );
        let _ = writeln!(
            out,
            r#"<text x="{x0}" y="{:.1}">0</text><text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            y0 + ph + 14.0,
            x0 + pw,
            y0 + ph + 14.0,
            r.edges[bins]
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_suite(dir: &Path, suite: &SuiteReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("histograms.csv"), suite_csv(suite))?;
    fs::write(dir.join("histograms.svg"), suite_svg(suite))?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&suite_summary(suite))? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rel: Relation, d: &[f64]) -> Vec<DistanceSample> {
        d.iter().map(|&distance| DistanceSample { relation: rel, distance }).collect()
    }

    #[test]
    fn hand_binned_overlap() {
        let mut s = ds(Relation::Related, &[1.0, 1.0]);
        s.extend(ds(Relation::Unrelated, &[1.0, 3.0]));
        let r = histogram_report(&s, 2).unwrap();
        assert_eq!(r.edges, vec![0.0, 1.5, 3.0]);
        assert_eq!(r.related.counts, vec![2, 0]);
        assert_eq!(r.unrelated.counts, vec![1, 1]);
        assert_eq!(r.overlap, 0.5);
    }

    #[test]
    fn identical_and_disjoint() {
        let mut s = ds(Relation::Related, &[0.5, 2.0, 3.0]);
        s.extend(ds(Relation::Unrelated, &[3.0, 0.5, 2.0]));
        assert_eq!(histogram_report(&s, 10).unwrap().overlap, 1.0);
        let mut s = ds(Relation::Related, &[0.1, 0.2]);
        s.extend(ds(Relation::Unrelated, &[9.0, 10.0]));
        assert_eq!(histogram_report(&s, 10).unwrap().overlap, 0.0);
    }

    #[test]
    fn single_label_errors() {
        assert!(histogram_report(&ds(Relation::Related, &[1.0]), 4).is_err());
        let mut s = ds(Relation::Related, &[1.0]);
        s.extend(ds(Relation::Unrelated, &[2.0]));
        assert!(histogram_report(&s, 1).is_err());
    }
}
