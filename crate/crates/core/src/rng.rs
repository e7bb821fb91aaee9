//! Keyed deterministic random streams.
//!
//! Every stochastic component draws from a ChaCha stream whose seed is a
//! hash of a small key tuple, so results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key tuple into a single 64-bit seed.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// A fresh RNG for the given key tuple.
pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(keys))
}

// Stream tags. Kept distinct so two consumers sharing the other keys never
// observe correlated draws.
pub(crate) const TAG_SCENE: u64 = 0x5C;
pub(crate) const TAG_LEXICON: u64 = 0x1E;
pub(crate) const TAG_DETECT: u64 = 0xD7;
pub(crate) const TAG_CAPTION: u64 = 0xCA;
pub(crate) const TAG_BOX: u64 = 0xB0;
pub(crate) const TAG_DEMO: u64 = 0xDE;
pub(crate) const TAG_INIT: u64 = 0x17;
pub(crate) const TAG_SHUFFLE: u64 = 0x5F;
pub(crate) const TAG_ROLLOUT: u64 = 0x20;
pub(crate) const TAG_SPLIT: u64 = 0x59;
pub(crate) const TAG_RL: u64 = 0x21;
