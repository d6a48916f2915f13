//! Deterministic RNG derivation.
//!
//! All randomness in the crate flows through ChaCha8 generators keyed by a
//! user-visible seed plus a stream tag, so any value can be regenerated from
//! ids alone without storing random state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping unrelated draws statistically independent.
pub mod tag {
    pub const WORLD_ENV: u64 = 0x01;
    pub const WORLD_MIXING: u64 = 0x02;
    pub const EPISODES: u64 = 0x03;
    pub const INSTRUCTION: u64 = 0x04;
    pub const APPEARANCE_NOISE: u64 = 0x05;
    pub const FEATURE: u64 = 0x06;
    pub const TRAIN_INIT: u64 = 0x07;
    pub const TRAIN_SHUFFLE: u64 = 0x08;
    pub const DROPOUT: u64 = 0x09;
    pub const DETECTION: u64 = 0x0a;
    pub const GRAD_CHECK: u64 = 0x0b;
}

/// SplitMix64 finalizer; decorrelates structured inputs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of stream identifiers into one 64-bit key.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// A ChaCha8 generator keyed by `seed` and the given stream identifiers.
pub fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}
