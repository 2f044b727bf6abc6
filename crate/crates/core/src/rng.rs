//! Seed derivation.
//!
//! Every stochastic step (subset selection, weight init, shuffling) draws from
//! its own ChaCha8 stream seeded by `derive_seed(base, purpose, index)`, so a
//! run is fully determined by its base seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PURPOSE_SUBSET_TRAIN: &str = "subset-train";
pub const PURPOSE_SUBSET_TEST: &str = "subset-test";
pub const PURPOSE_INIT: &str = "init";
pub const PURPOSE_FINAL_INIT: &str = "final-init";
pub const PURPOSE_SHUFFLE: &str = "shuffle";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the purpose tag, mixed with base and index through SplitMix64.
pub fn derive_seed(base: u64, purpose: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(base ^ h).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
