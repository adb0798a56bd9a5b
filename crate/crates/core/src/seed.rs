//! Keyed, schedule-independent random streams.
//!
//! Every stochastic decision in the crate draws from a stream keyed by
//! `(seed, purpose, key)`, so results do not depend on iteration order or on
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of `(seed, purpose, key)`.
pub fn keyed_hash(seed: u64, purpose: &str, key: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, purpose.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, key.as_bytes());
    mix64(h)
}

/// Derive a child seed from a parent seed and an index (draws, sub-streams).
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    keyed_hash(seed, purpose, &index.to_string())
}

pub fn keyed_rng(seed: u64, purpose: &str, key: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(keyed_hash(seed, purpose, key))
}

/// Uniform value in [0, 1) from a keyed hash, for sort keys.
pub fn keyed_unit(seed: u64, purpose: &str, key: &str) -> f64 {
    (keyed_hash(seed, purpose, key) >> 11) as f64 / (1u64 << 53) as f64
}
