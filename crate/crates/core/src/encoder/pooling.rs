use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{HiddenStates, StateGrads};

/// How the subword vectors of one word are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Average,
    First,
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordVector {
    pub values: Vec<f64>,
    pub layer: usize,
    pub pooling: Pooling,
}

fn check(states: &HiddenStates, span: (usize, usize), layer: usize) -> Result<()> {
    if span.0 >= span.1 {
        return Err(Error::invalid(format!("empty span {span:?}")));
    }
    if span.1 > states.seq_len {
        return Err(Error::invalid(format!("span {span:?} exceeds sequence length {}", states.seq_len)));
    }
    if layer >= states.layers.len() {
        return Err(Error::invalid(format!("layer {layer} ≥ {}", states.layers.len())));
    }
    Ok(())
}

/// Pools the rows of `span` (half-open) at `layer`.
pub fn word_vector(states: &HiddenStates, span: (usize, usize), layer: usize, pooling: Pooling) -> Result<WordVector> {
    check(states, span, layer)?;
    let values = match pooling {
        Pooling::First => states.row(layer, span.0).to_vec(),
        Pooling::Last => states.row(layer, span.1 - 1).to_vec(),
        Pooling::Average => {
            let mut acc = vec![0.0; states.dim];
            for p in span.0..span.1 {
                for (a, v) in acc.iter_mut().zip(states.row(layer, p)) {
                    *a += v;
                }
            }
            let k = (span.1 - span.0) as f64;
            acc.iter_mut().for_each(|a| *a /= k);
            acc
        }
    };
    Ok(WordVector { values, layer, pooling })
}

/// Routes `grad` (with respect to the pooled vector) back onto the rows it came from.
pub fn word_vector_grad(grads: &mut StateGrads, span: (usize, usize), layer: usize, pooling: Pooling, grad: &[f64]) {
    let add = |g: &mut StateGrads, pos: usize, s: f64| {
        for (a, v) in g.row_mut(layer, pos).iter_mut().zip(grad) {
            *a += s * v;
        }
    };
    match pooling {
        Pooling::First => add(grads, span.0, 1.0),
        Pooling::Last => add(grads, span.1 - 1, 1.0),
        Pooling::Average => {
            let s = 1.0 / (span.1 - span.0) as f64;
            for p in span.0..span.1 {
                add(grads, p, s);
            }
        }
    }
}
