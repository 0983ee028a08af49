//! Deterministic RNG stream derivation.
//!
//! A single user-facing `u64` seed is split into independent named streams
//! (generation, filtering, training, evaluation) and per-episode substreams.
//! Derivation is pure mixing, so any stream can be reconstructed in isolation
//! without replaying the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer. Bijective on u64, good avalanche behavior.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a stream name.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    let mut h = mix(base);
    for &b in name.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

/// Derives a child seed from a base seed and an index (e.g. an episode id).
pub fn derive_indexed_seed(base: u64, index: u64) -> u64 {
    mix(mix(base) ^ mix(index))
}

/// RNG for a named top-level stream.
pub fn stream(base: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, name))
}

/// Seed underlying `substream`; recorded in reports so a single episode's
/// stream can be rebuilt without the base seed.
pub fn episode_seed(base: u64, name: &str, index: u64) -> u64 {
    derive_indexed_seed(derive_seed(base, name), index)
}

/// RNG for an indexed substream of a named stream.
pub fn substream(base: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(episode_seed(base, name, index))
}

/// RNG for a doubly indexed substream (e.g. iteration and epoch).
pub fn substream2(base: u64, name: &str, i: u64, j: u64) -> ChaCha8Rng {
    let s = derive_indexed_seed(derive_seed(base, name), i);
    ChaCha8Rng::seed_from_u64(derive_indexed_seed(s, j))
}
