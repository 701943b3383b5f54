//! Seed handling. Every random draw in the crate comes from a ChaCha8
//! stream whose seed is derived from a user seed plus a work-unit index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for the `index`-th baseline of a multi-baseline run.
pub fn baseline_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// SplitMix64 finalizer; mixes a seed with a salt into an unrelated seed.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed derived from a string label (file names in multi-image runs).
pub fn labeled_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes, then mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix(seed, h)
}
