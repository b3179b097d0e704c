//! Desk-scale cross-lingual adjustment laboratory: word alignment, a small
//! trainable encoder, alignment-based adjustment, fine-tuning with replay,
//! and the distance, retrieval and significance analyses built on them.

pub mod adjuster;
pub mod analysis;
pub mod aligner;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod finetuner;
pub mod optim;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
