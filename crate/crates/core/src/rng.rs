//! Seed derivation. Every stochastic step draws from a generator keyed by
//! `(seed, tags...)`, so results do not depend on iteration or thread order
//! and a resumed run sees the same streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn derive(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream tags, so unrelated consumers of one seed never share a stream.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const SPAN_SAMPLE: u64 = 3;
    pub const MATCHER: u64 = 4;
    pub const BASELINE_INIT: u64 = 5;
    pub const MATCHER_INIT: u64 = 6;
    pub const BASELINE_FIT: u64 = 7;
}
