//! Seeded, platform-stable randomness.
//!
//! Sub-streams are keyed by hashing a textual tag together with the parent
//! seed (XXH64), so adding a new consumer never shifts existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use twox_hash::XxHash64;

pub type Rng = ChaCha8Rng;

/// Seeded XXH64 of `bytes`.
#[inline]
pub fn hash64(seed: u64, bytes: &[u8]) -> u64 {
    XxHash64::oneshot(seed, bytes)
}

pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let h = hash64(seed, tag.as_bytes());
    hash64(h, &index.to_le_bytes())
}

pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

#[inline]
pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}
