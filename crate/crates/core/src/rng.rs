//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit integer seed. Independent
//! consumers inside one operation (e.g. the main-task shuffle and the replay
//! sampler) draw from separate streams so that adding one never perturbs the
//! other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A stream keyed by `(seed, stream)`; distinct streams are independent.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const SHUFFLE: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const MASKING: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const PERMUTATION: u64 = 7;
}

/// The `index`-th member of a family of streams, e.g. one per permutation
/// iteration, so results do not depend on evaluation order.
pub fn indexed(seed: u64, stream: u64, index: u64) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(b"indexed\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
