//! Seed aggregation, the paired t-test and the paired permutation test.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::finetuner::{accuracy, micro_f1};
use crate::rng;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Metric values indexed by `(example, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMatrix {
    pub values: Vec<Vec<f64>>,
}

impl SeedMatrix {
    /// Builds the matrix from one column per seed.
    pub fn from_seed_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let first = columns.first().ok_or_else(|| Error::invalid("no seeds"))?;
        if columns.iter().any(|c| c.len() != first.len()) {
            return Err(Error::invalid("seed columns differ in length"));
        }
        Ok(SeedMatrix {
            values: (0..first.len()).map(|e| columns.iter().map(|c| c[e]).collect()).collect(),
        })
    }

    pub fn num_examples(&self) -> usize {
        self.values.len()
    }

    pub fn num_seeds(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn example_means(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// Differences had zero variance; `t` and `p` are the limiting values.
    pub degenerate: bool,
}

/// Two-sided p of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Classical paired t-test on `a − b`. Zero-variance differences give
/// `t = 0, p = 1` when their mean is zero and `t = ±∞, p = 0` otherwise,
/// both marked `degenerate`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs ≥ 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    // Differences equal up to rounding count as constant.
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if var.sqrt() <= 1e-12 * scale {
        return Ok(if mean.abs() <= 1e-12 * scale {
            TTest {
                t: 0.0,
                df,
                p: 1.0,
                degenerate: true,
            }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                df,
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df as f64),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MicroF1 { outside: usize },
}

impl Metric {
    pub fn score(self, predictions: &[usize], gold: &[usize]) -> f64 {
        match self {
            Metric::Accuracy => accuracy(predictions, gold),
            Metric::MicroF1 { outside } => micro_f1(predictions, gold, outside),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub metric_a: f64,
    pub metric_b: f64,
    pub observed: f64,
    pub p: f64,
}

/// Paired permutation test on `|metric(A) − metric(B)|`: every iteration
/// swaps each position's two predictions with probability ½, drawing from
/// its own substream. `p = (#{permuted ≥ observed} + 1) / (iterations + 1)`.
pub fn permutation_test(
    preds_a: &[usize],
    preds_b: &[usize],
    gold: &[usize],
    metric: Metric,
    iterations: usize,
    seed: u64,
) -> Result<PermutationResult> {
    if preds_a.len() != preds_b.len() || preds_a.len() != gold.len() {
        return Err(Error::invalid(format!(
            "sequence lengths differ: {} / {} / {}",
            preds_a.len(),
            preds_b.len(),
            gold.len()
        )));
    }
    let metric_a = metric.score(preds_a, gold);
    let metric_b = metric.score(preds_b, gold);
    let observed = (metric_a - metric_b).abs();
    let tolerance = 1e-12;
    let mut a = preds_a.to_vec();
    let mut b = preds_b.to_vec();
    let mut count = 0usize;
    for it in 0..iterations {
        let mut r = rng::indexed(seed, rng::streams::PERMUTATION, it as u64);
        for k in 0..gold.len() {
            let swap = r.gen_bool(0.5);
            let (x, y) = if swap { (preds_b[k], preds_a[k]) } else { (preds_a[k], preds_b[k]) };
            a[k] = x;
            b[k] = y;
        }
        let stat = (metric.score(&a, gold) - metric.score(&b, gold)).abs();
        if stat >= observed - tolerance {
            count += 1;
        }
    }
    Ok(PermutationResult {
        metric_a,
        metric_b,
        observed,
        p: (count + 1) as f64 / (iterations + 1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub metric_a: f64,
    pub metric_b: f64,
    pub statistic: f64,
    pub p: f64,
    pub significant: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl StatsReport {
    pub fn from_t_test(a: &[f64], b: &[f64]) -> Result<Self> {
        let t = paired_t_test(a, b)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(StatsReport {
            metric_a: mean(a),
            metric_b: mean(b),
            statistic: t.t,
            p: t.p,
            significant: t.p < SIGNIFICANCE_LEVEL,
            note: t.degenerate.then(|| "zero-variance differences".to_owned()),
        })
    }

    pub fn from_permutation(r: &PermutationResult) -> Self {
        StatsReport {
            metric_a: r.metric_a,
            metric_b: r.metric_b,
            statistic: r.observed,
            p: r.p,
            significant: r.p < SIGNIFICANCE_LEVEL,
            note: None,
        }
    }
}

/// One row of a per-example prediction dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpRow {
    pub seed: u64,
    pub example: usize,
    pub position: usize,
    pub gold: usize,
    pub predicted: usize,
}

pub fn parse_prediction_dump(text: &str, origin: &Path) -> Result<Vec<DumpRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            message,
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 columns, found {}", cols.len())));
        }
        let num = |i: usize| cols[i].trim().parse::<u64>().map_err(|e| err(format!("column {}: {e}", i + 1)));
        rows.push(DumpRow {
            seed: num(0)?,
            example: num(1)? as usize,
            position: num(2)? as usize,
            gold: num(3)? as usize,
            predicted: num(4)? as usize,
        });
    }
    Ok(rows)
}

pub fn load_prediction_dump(path: &Path) -> Result<Vec<DumpRow>> {
    parse_prediction_dump(&std::fs::read_to_string(path)?, path)
}

/// Per-example correctness (fraction of correct positions) by seed.
pub fn correctness_matrix(rows: &[DumpRow]) -> Result<SeedMatrix> {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let examples = rows.iter().map(|r| r.example + 1).max().unwrap_or(0);
    let mut columns = vec![vec![(0usize, 0usize); examples]; seeds.len()];
    for r in rows {
        let s = seeds.binary_search(&r.seed).unwrap();
        let cell = &mut columns[s][r.example];
        cell.0 += usize::from(r.gold == r.predicted);
        cell.1 += 1;
    }
    let mut out = Vec::with_capacity(columns.len());
    for (s, col) in columns.into_iter().enumerate() {
        if let Some(e) = col.iter().position(|c| c.1 == 0) {
            return Err(Error::invalid(format!("seed {} has no rows for example {e}", seeds[s])));
        }
        out.push(col.into_iter().map(|(c, n)| c as f64 / n as f64).collect());
    }
    SeedMatrix::from_seed_columns(&out)
}

/// Predictions and gold concatenated in (seed, example, position) order.
pub fn concatenated(rows: &[DumpRow]) -> (Vec<usize>, Vec<usize>) {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| (r.seed, r.example, r.position));
    (
        sorted.iter().map(|r| r.predicted).collect(),
        sorted.iter().map(|r| r.gold).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_t_test() {
        let t = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        // Differences (0, 0, -1): mean -1/3, sd 1/sqrt(3), t = -1.
        assert!((t.t.abs() - 1.0).abs() < 1e-12);
        assert_eq!(t.df, 2);
        // df = 2: two-sided p = 1 - |t| / sqrt(2 + t^2).
        assert!((t.p - (1.0 - 1.0 / 3f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let t = paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((t.t, t.p, t.degenerate), (0.0, 1.0, true));
        let t = paired_t_test(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!((t.t, t.p, t.degenerate), (f64::INFINITY, 0.0, true));
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn identical_predictions_give_p_one() {
        let p = permutation_test(&[0, 1, 1], &[0, 1, 1], &[0, 1, 0], Metric::Accuracy, 50, 0).unwrap();
        assert_eq!(p.p, 1.0);
    }

    #[test]
    fn dump_roundtrip() {
        let text = "seed,example,position,gold,predicted,correct\n0,0,0,1,1,1\n0,1,0,0,1,0\n1,0,0,1,1,1\n1,1,0,0,0,1\n";
        let rows = parse_prediction_dump(text, Path::new("x")).unwrap();
        let m = correctness_matrix(&rows).unwrap();
        assert_eq!(m.values, vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(m.example_means(), vec![1.0, 0.5]);
        assert_eq!(concatenated(&rows).0, vec![1, 1, 1, 0]);
    }
}
