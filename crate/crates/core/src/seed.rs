//! Seed derivation. Every random quantity in the crate is a pure function of
//! a master seed and a small tuple of indices, so results do not depend on
//! evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a list of indices.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(seed.wrapping_add(GOLDEN)), |acc, &p| {
            mix64(acc ^ mix64(p.wrapping_add(GOLDEN)))
        })
}

/// Uniform draw in [0, 1) keyed by (seed, parts), 53 bits of precision.
#[inline]
pub fn uniform(seed: u64, parts: &[u64]) -> f64 {
    (derive(seed, parts) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, parts))
}

// Stream tags keep unrelated consumers of one master seed apart.
pub(crate) const TAG_LABELING: u64 = 1;
pub(crate) const TAG_ORACLE: u64 = 2;
pub(crate) const TAG_SAMPLING: u64 = 3;
pub(crate) const TAG_TRIAL: u64 = 4;
