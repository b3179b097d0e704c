mod common;

use std::time::{Duration, Instant};

use common::checks::{aligner_gate, non_increasing};
use xling_core::corpus::Reorder;

#[test]
fn monotone_corpus_aligns_almost_perfectly() {
    let start = Instant::now();
    let (aer, fwd, rev) = aligner_gate(Reorder::None);
    assert!(aer <= 0.05, "AER {aer}");
    assert!(non_increasing(&fwd) && non_increasing(&rev), "{fwd:?} {rev:?}");
    assert!(start.elapsed() < Duration::from_secs(30));
}

#[test]
fn adjacent_swaps_stay_under_gate() {
    let start = Instant::now();
    let (aer, fwd, rev) = aligner_gate(Reorder::SwapAdjacent);
    assert!(aer <= 0.15, "AER {aer}");
    assert!(non_increasing(&fwd) && non_increasing(&rev));
    assert!(start.elapsed() < Duration::from_secs(30));
}
