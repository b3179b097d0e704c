//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! The full-pipeline criteria run the default configuration twice (about a
//! quarter of an hour on one core).

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::checks::{
    aligner_gate, alignment_gradients, combined_gradients, encoder_gradients, ks_uniform, non_increasing,
    null_p_values, zero_alpha_identity,
};
use common::{fixture, small_model};
use xling_core::analysis::Scenario;
use xling_core::corpus::Reorder;
use xling_core::pipeline::{run_pipeline, Manifest, RunConfig, RunOptions, Summary};
use xling_core::retrieval::{best_layer, mean_reciprocal_rank, xsr_rank};
use xling_core::stats::{paired_t_test, permutation_test, Metric};

const GRAD_TOLERANCE: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const AER_MONOTONE: f64 = 0.05;
const AER_SWAPPED: f64 = 0.15;
const ALIGN_BUDGET: Duration = Duration::from_secs(30);
const PIPELINE_BUDGET: Duration = Duration::from_secs(15 * 60);
const SIGNIFICANCE: f64 = 0.05;
const MRR_FIXTURE: f64 = 7.0 / 12.0;
const MRR_TOLERANCE: f64 = 1e-9;
const T_TOLERANCE: f64 = 1e-9;
const T_P: f64 = 0.4226;
const T_P_TOLERANCE: f64 = 1e-3;
const KS_LIMIT: f64 = 0.15;
const NULL_REPS: u64 = 200;
const NULL_ITERATIONS: usize = 1000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let encoder = encoder_gradients();
    let align = alignment_gradients();
    let (combined, head) = combined_gradients();
    let elapsed = start.elapsed();
    let worst = [&encoder, &align, &combined, &head].iter().map(|c| c.max_rel).fold(0.0, f64::max);
    verdict(
        worst <= GRAD_TOLERANCE && elapsed < GRAD_BUDGET,
        format!(
            "max rel error {worst:.2e} (encoder {:.2e}, alignment {:.2e}, combined {:.2e}, head {:.2e}) in {:.1}s",
            encoder.max_rel,
            align.max_rel,
            combined.max_rel,
            head.max_rel,
            elapsed.as_secs_f64()
        ),
    )
}

fn aligner() -> Verdict {
    let start = Instant::now();
    let (plain, f1, r1) = aligner_gate(Reorder::None);
    let (swapped, f2, r2) = aligner_gate(Reorder::SwapAdjacent);
    let elapsed = start.elapsed();
    let monotone = [&f1, &r1, &f2, &r2].iter().all(|t| non_increasing(t));
    verdict(
        plain <= AER_MONOTONE && swapped <= AER_SWAPPED && monotone && elapsed < ALIGN_BUDGET,
        format!(
            "AER {plain:.4} unreordered, {swapped:.4} swapped; NLL non-increasing: {monotone}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn per_seed(summary: &Summary, s: Scenario) -> &[f64] {
    summary.overlap.get(&s).map_or(&[], |m| m.values.as_slice())
}

fn overlap_ordering(summary: &Summary, elapsed: Duration) -> Verdict {
    let orig = per_seed(summary, Scenario::Original);
    let adj = per_seed(summary, Scenario::Adjusted);
    let ft = per_seed(summary, Scenario::AdjustedFinetuned);
    let cont = per_seed(summary, Scenario::AdjustedContinual);
    let n = summary.seeds.len();
    let complete = [orig, adj, ft, cont].iter().all(|v| v.len() == n);
    let mut failures = Vec::new();
    for i in 0..n.min(orig.len()).min(adj.len()).min(ft.len()).min(cont.len()) {
        if !(adj[i] < orig[i] && ft[i] > adj[i] && cont[i] < ft[i]) {
            failures.push(format!(
                "seed {}: orig {:.3} adj {:.3} adj+ft {:.3} adj+cont {:.3}",
                summary.seeds[i], orig[i], adj[i], ft[i], cont[i]
            ));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let detail = format!(
        "mean overlap orig {:.3}, adj {:.3}, adj+ft {:.3}, adj+cont {:.3} over {n} seeds; pipeline {:.0}s{}",
        mean(orig),
        mean(adj),
        mean(ft),
        mean(cont),
        elapsed.as_secs_f64(),
        if failures.is_empty() { String::new() } else { format!("; violations: {}", failures.join("; ")) }
    );
    verdict(complete && failures.is_empty() && elapsed < PIPELINE_BUDGET, detail)
}

fn transfer(summary: &Summary) -> Verdict {
    let Some(task) = summary.tasks.get("classification") else {
        return verdict(false, "no classification results");
    };
    let target = &task.splits["target"];
    let adjusted = target[&Scenario::AdjustedFinetuned].mean;
    let original = target[&Scenario::OriginalFinetuned].mean;
    let test = task
        .tests
        .iter()
        .find(|c| c.a == Scenario::AdjustedFinetuned && c.b == Scenario::OriginalFinetuned);
    let Some(test) = test else {
        return verdict(false, "missing adjusted vs original comparison");
    };
    let p = test.t_test.p;
    let flagged = task.flags.iter().any(|f| f.starts_with("adjusted+finetuned vs original+finetuned"));
    let direction = adjusted > original;
    let significance = if p < SIGNIFICANCE {
        "significant".to_owned()
    } else if flagged {
        "not significant, flagged in summary".to_owned()
    } else {
        "not significant and not flagged".to_owned()
    };
    verdict(
        direction && (p < SIGNIFICANCE || flagged),
        format!("target accuracy adjusted {adjusted:.4} vs original {original:.4}; t-test p = {p:.3e} ({significance})"),
    )
}

fn zero_alpha() -> Verdict {
    let (identical, alpha_matters) = zero_alpha_identity();
    verdict(
        identical,
        format!("bit-identical parameters and loss trace: {identical}; nonzero weight changes result: {alpha_matters}"),
    )
}

fn retrieval() -> Verdict {
    let fx = fixture(40, 21);
    let model = small_model(fx.vocab.len(), 8);
    let mut seen = BTreeSet::new();
    let sentences: Vec<Vec<u32>> = fx
        .corpus
        .pairs
        .iter()
        .map(|p| fx.vocab.tokenize_with_spans(&p.src).with_cls().subword_ids)
        .filter(|ids| seen.insert(ids.clone()))
        .collect();
    let gold: Vec<usize> = (0..sentences.len()).collect();
    let identity = xsr_rank(&model, &sentences, &sentences, &gold, 2).unwrap().mrr;

    let fixture_mrr = mean_reciprocal_rank(&[1, 2, 4]);

    let queries: Vec<Vec<u32>> = fx.corpus.pairs.iter().map(|p| fx.vocab.tokenize_with_spans(&p.src).with_cls().subword_ids).collect();
    let corpus: Vec<Vec<u32>> = fx.corpus.pairs.iter().map(|p| fx.vocab.tokenize_with_spans(&p.tgt).with_cls().subword_ids).collect();
    let gold: Vec<usize> = (0..queries.len()).collect();
    let sweep = best_layer(&model, &queries, &corpus, &gold).unwrap();
    let dominates = sweep.per_layer.iter().all(|r| sweep.best_mrr >= r.mrr);

    verdict(
        identity == 1.0
            && (fixture_mrr - MRR_FIXTURE).abs() <= MRR_TOLERANCE
            && format!("{fixture_mrr:.6}") == "0.583333"
            && dominates,
        format!(
            "identity MRR {identity}; ranks {{1,2,4}} MRR {fixture_mrr:.12}; best layer {} MRR {:.4} vs per-layer {:?}",
            sweep.best_layer,
            sweep.best_mrr,
            sweep.per_layer.iter().map(|r| (r.mrr * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn statistics() -> Verdict {
    let t = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    let same = [0, 1, 1, 0, 2];
    let identical = permutation_test(&same, &same, &[0, 1, 0, 0, 2], Metric::Accuracy, NULL_ITERATIONS, 0)
        .unwrap()
        .p;
    let ks = ks_uniform(null_p_values(NULL_REPS, NULL_ITERATIONS));
    verdict(
        (t.t.abs() - 1.0).abs() <= T_TOLERANCE && (t.p - T_P).abs() <= T_P_TOLERANCE && identical == 1.0 && ks <= KS_LIMIT,
        format!(
            "t = {} (df {}), p = {:.6}; identical-prediction p = {identical}; null KS distance {ks:.4}",
            t.t, t.df, t.p
        ),
    )
}

fn checkpoint_hashes(root: &Path) -> Vec<(String, String)> {
    Manifest::load(root)
        .map(|m| m.files.into_iter().filter(|f| f.path.ends_with(".ckpt")).map(|f| (f.path, f.sha256)).collect())
        .unwrap_or_default()
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    let a = std::fs::read(first.join("summary.json")).unwrap_or_default();
    let b = std::fs::read(second.join("summary.json")).unwrap_or_default();
    let (ca, cb) = (checkpoint_hashes(first), checkpoint_hashes(second));
    let same_summary = !a.is_empty() && a == b;
    let same_ckpt = !ca.is_empty() && ca == cb;
    verdict(
        same_summary && same_ckpt,
        format!(
            "summary.json identical: {same_summary} ({} bytes); {} checkpoint hashes identical: {same_ckpt}",
            a.len(),
            ca.len()
        ),
    )
}

fn report(id: usize, name: &str, v: &Verdict) {
    println!("{} {id} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut record = |id, name, v: Verdict| {
        report(id, name, &v);
        verdicts.push(v.pass);
    };
    record(1, "gradient correctness", gradients());
    record(2, "aligner quality", aligner());
    record(5, "zero replay weight reduces to fine-tuning", zero_alpha());
    record(6, "retrieval oracles", retrieval());
    record(7, "statistics oracles", statistics());

    let dir = tempfile::tempdir().expect("temporary directory");
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    let config = RunConfig::default();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get()).min(config.seeds.len());
    let options = RunOptions { jobs, verbose: false };

    let start = Instant::now();
    let run = run_pipeline(&config, &first, options);
    let elapsed = start.elapsed();
    match run.as_ref().map(|o| o.summary.as_ref()) {
        Ok(Some(summary)) => {
            record(3, "overlap ordering", overlap_ordering(summary, elapsed));
            record(4, "zero-shot transfer direction", transfer(summary));
        }
        Ok(None) => {
            record(3, "overlap ordering", verdict(false, "pipeline produced no summary"));
            record(4, "zero-shot transfer direction", verdict(false, "pipeline produced no summary"));
        }
        Err(e) => {
            record(3, "overlap ordering", verdict(false, format!("pipeline failed: {e}")));
            record(4, "zero-shot transfer direction", verdict(false, format!("pipeline failed: {e}")));
        }
    }
    let rerun = run_pipeline(&config, &second, options);
    record(
        8,
        "determinism",
        match (&run, rerun) {
            (Ok(_), Ok(_)) => determinism(&first, &second),
            (_, Err(e)) => verdict(false, format!("rerun failed: {e}")),
            (Err(_), _) => verdict(false, "first run failed"),
        },
    );

    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
