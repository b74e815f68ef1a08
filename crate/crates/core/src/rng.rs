//! Deterministic stream derivation.
//!
//! Every randomized component draws from a ChaCha stream derived from a user
//! seed plus a role tag, so that results are independent of thread count and
//! evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates structured seed inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = mix(seed);
    for b in label.as_bytes() {
        h = mix(h ^ u64::from(*b));
    }
    h
}

/// Derives a child seed from a parent seed and an index (e.g. ray, sample).
pub fn derive_seed_index(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ mix(index.wrapping_mul(0xda94_2042_e4dd_58b5)))
}

/// Counter-based per-item stream: same key, per-index stream offset.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.into());
    rng
}

/// Plain RNG for a named role.
pub fn named_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}
