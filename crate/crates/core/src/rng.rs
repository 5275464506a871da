//! Deterministic seeding helpers.
//!
//! Every random decision in the crate flows from a caller-supplied u64 seed
//! through [`derive`], so any component can be replayed in isolation. ChaCha8
//! is used as the stream cipher RNG because its output is identical across
//! platforms, unlike the default `StdRng` whose algorithm is unspecified.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit mix (splitmix64 finalizer). Good avalanche, cheap, stable.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a base seed and a context label.
///
/// The label keeps unrelated consumers (data generation, weight init,
/// shuffling, channel noise) on disjoint streams even when they share the
/// same base seed.
pub fn derive(base: u64, label: &str) -> u64 {
    let mut h = mix(base);
    for &b in label.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

/// Derives a child seed indexed by up to three integers (round, client, ...).
pub fn derive_indexed(base: u64, label: &str, idx: &[u64]) -> u64 {
    let mut h = derive(base, label);
    for &i in idx {
        h = mix(h ^ i);
    }
    h
}

/// Portable, seedable RNG used throughout the crate.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
