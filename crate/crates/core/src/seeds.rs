//! Per-run seed derivation.
//!
//! `seed_i = hash64(master_seed, i)` where `hash64` feeds
//! `master_seed ^ (i * 0x9E3779B97F4A7C15)` through the SplitMix64 finalizer.
//! The mapping is part of the output format: changing it changes every
//! published experiment.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn hash64(master_seed: u64, index: u64) -> u64 {
    mix64(master_seed ^ index.wrapping_add(1).wrapping_mul(GOLDEN))
}

/// `hash64(master_seed, i)` for `i = 0..n`.
pub fn derive_seeds(master_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| hash64(master_seed, i)).collect()
}
