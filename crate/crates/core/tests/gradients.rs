//! Analytic gradients against central finite differences on a 2-layer,
//! dim-16 encoder.

mod common;

use common::checks::{alignment_gradients, combined_gradients, encoder_gradients};

const TOLERANCE: f64 = 1e-5;

#[test]
fn encoder_backward_matches_differences() {
    let check = encoder_gradients();
    assert!(check.max_rel <= TOLERANCE, "max rel {:.3e} over {}", check.max_rel, check.checked);
}

#[test]
fn alignment_loss_gradient_matches_differences() {
    let check = alignment_gradients();
    assert!(check.max_rel <= TOLERANCE, "max rel {:.3e}", check.max_rel);
}

#[test]
fn combined_loss_gradient_matches_differences() {
    let (encoder, head) = combined_gradients();
    assert!(encoder.max_rel <= TOLERANCE, "encoder max rel {:.3e}", encoder.max_rel);
    assert!(head.max_rel <= TOLERANCE, "head max rel {:.3e}", head.max_rel);
}
