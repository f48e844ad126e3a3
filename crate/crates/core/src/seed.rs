//! Deterministic per-task seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for task `index` under `master`; a pure function of both.
pub fn split_seed(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1))))
}

/// Seed for a named stream of a task, e.g. the curvature chain of dataset 17.
pub fn stream_seed(master: u64, index: u64, stream: u64) -> u64 {
    split_seed(split_seed(master, index), stream)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
