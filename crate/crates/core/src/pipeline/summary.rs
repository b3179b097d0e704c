use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RunConfig, SeedResult};
use crate::analysis::Scenario;
use crate::error::{Error, Result};
use crate::stats::{concatenated, correctness_matrix, permutation_test, DumpRow, Metric, StatsReport};

/// One metric across seeds, in seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marks: Vec<String>,
}

impl MetricSummary {
    fn new(values: Vec<f64>) -> Self {
        MetricSummary {
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            values,
            marks: Vec::new(),
        }
    }
}

/// Both tests for one scenario comparison; `primary` names the one marks use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Scenario,
    pub b: Scenario,
    pub primary: String,
    pub t_test: StatsReport,
    pub permutation: StatsReport,
}

impl Comparison {
    pub fn primary_report(&self) -> &StatsReport {
        if self.primary == "t_test" {
            &self.t_test
        } else {
            &self.permutation
        }
    }

    /// Significant with `a` ahead of `b`.
    pub fn improves(&self) -> bool {
        let r = self.primary_report();
        r.significant && r.metric_a > r.metric_b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub metric: String,
    /// `split → scenario → metric`.
    pub splits: BTreeMap<String, BTreeMap<Scenario, MetricSummary>>,
    /// Comparisons on the target split.
    pub tests: Vec<Comparison>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub tasks: BTreeMap<String, TaskSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overlap: BTreeMap<Scenario, MetricSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub separation: BTreeMap<Scenario, MetricSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub related_mean_distance: BTreeMap<Scenario, MetricSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub xsr_mrr: BTreeMap<Scenario, MetricSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub xsr_best_layer: BTreeMap<Scenario, Vec<usize>>,
}

impl Summary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn tests_only(&self) -> BTreeMap<&str, &[Comparison]> {
        self.tasks.iter().map(|(k, v)| (k.as_str(), v.tests.as_slice())).collect()
    }
}

const COMPARISONS: [(Scenario, Scenario, &str); 3] = [
    (Scenario::AdjustedFinetuned, Scenario::OriginalFinetuned, "*"),
    (Scenario::AdjustedContinual, Scenario::OriginalFinetuned, "*"),
    (Scenario::AdjustedContinual, Scenario::AdjustedFinetuned, "**"),
];

fn per_scenario<T: Copy>(
    seeds: &[SeedResult],
    get: impl Fn(&SeedResult) -> &BTreeMap<Scenario, T>,
) -> BTreeMap<Scenario, Vec<T>> {
    let mut out: BTreeMap<Scenario, Vec<T>> = BTreeMap::new();
    for s in seeds {
        for (k, v) in get(s) {
            out.entry(*k).or_default().push(*v);
        }
    }
    out
}

fn summarize_map(m: BTreeMap<Scenario, Vec<f64>>) -> BTreeMap<Scenario, MetricSummary> {
    m.into_iter().map(|(k, v)| (k, MetricSummary::new(v))).collect()
}

fn compare(
    rows: &BTreeMap<Scenario, Vec<DumpRow>>,
    a: Scenario,
    b: Scenario,
    outside: Option<usize>,
    config: &RunConfig,
) -> Result<Comparison> {
    let (ra, rb) = (&rows[&a], &rows[&b]);
    let ma = correctness_matrix(ra)?.example_means();
    let mb = correctness_matrix(rb)?.example_means();
    let t_test = StatsReport::from_t_test(&ma, &mb)?;
    let (pa, gold) = concatenated(ra);
    let (pb, gold_b) = concatenated(rb);
    if gold != gold_b {
        return Err(Error::invalid(format!("{a} and {b} dumps cover different examples")));
    }
    let metric = match outside {
        None => Metric::Accuracy,
        Some(outside) => Metric::MicroF1 { outside },
    };
    let perm = permutation_test(&pa, &pb, &gold, metric, config.stats.permutation_iterations, config.stats.seed)?;
    Ok(Comparison {
        a,
        b,
        // Sequence labelling uses the permutation test; example-level tasks the t-test.
        primary: if outside.is_some() { "permutation" } else { "t_test" }.to_owned(),
        t_test,
        permutation: StatsReport::from_permutation(&perm),
    })
}

pub(super) fn summarize(config: &RunConfig, tasks: &[(String, Option<usize>)], seeds: &[SeedResult]) -> Result<Summary> {
    let mut out = Summary {
        seeds: seeds.iter().map(|s| s.seed).collect(),
        tasks: BTreeMap::new(),
        overlap: summarize_map(per_scenario(seeds, |s| &s.overlap)),
        separation: summarize_map(per_scenario(seeds, |s| &s.separation)),
        related_mean_distance: summarize_map(per_scenario(seeds, |s| &s.related_mean)),
        xsr_mrr: BTreeMap::new(),
        xsr_best_layer: BTreeMap::new(),
    };
    for s in seeds {
        for (k, sweep) in &s.xsr {
            out.xsr_best_layer.entry(*k).or_default().push(sweep.best_layer);
        }
    }
    let mrr: BTreeMap<Scenario, Vec<f64>> = out
        .xsr_best_layer
        .keys()
        .map(|k| (*k, seeds.iter().filter_map(|s| s.xsr.get(k).map(|x| x.best_mrr)).collect()))
        .collect();
    out.xsr_mrr = summarize_map(mrr);

    for (name, outside) in tasks {
        let mut splits: BTreeMap<String, BTreeMap<Scenario, Vec<f64>>> = BTreeMap::new();
        let mut rows: BTreeMap<Scenario, Vec<DumpRow>> = BTreeMap::new();
        for s in seeds {
            let Some(tr) = s.tasks.get(name) else { continue };
            for (split, m) in &tr.metrics {
                for (k, v) in m {
                    splits.entry(split.clone()).or_default().entry(*k).or_default().push(*v);
                }
            }
            for (k, r) in &tr.dumps {
                rows.entry(*k).or_default().extend_from_slice(r);
            }
        }
        let mut splits: BTreeMap<String, BTreeMap<Scenario, MetricSummary>> =
            splits.into_iter().map(|(k, v)| (k, summarize_map(v))).collect();
        let mut tests = Vec::new();
        let mut flags = Vec::new();
        for (a, b, mark) in COMPARISONS {
            let c = compare(&rows, a, b, *outside, config)?;
            let r = c.primary_report();
            if c.improves() {
                if let Some(m) = splits.get_mut("target").and_then(|t| t.get_mut(&a)) {
                    m.marks.push(mark.to_owned());
                }
            } else if r.metric_a <= r.metric_b {
                flags.push(format!("{a} does not outperform {b} ({:.4} vs {:.4})", r.metric_a, r.metric_b));
            } else {
                flags.push(format!("{a} vs {b}: not significant (p = {:.4})", r.p));
            }
            tests.push(c);
        }
        out.tasks.insert(
            name.clone(),
            TaskSummary {
                metric: if outside.is_some() { "micro_f1" } else { "accuracy" }.to_owned(),
                splits,
                tests,
                flags,
            },
        );
    }
    Ok(out)
}
