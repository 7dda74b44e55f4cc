//! Deterministic random-number plumbing.
//!
//! Every stochastic component in the crate draws from a [`Rng`] seeded through
//! [`derive_seed`], so independent subsystems (data generation, per-head
//! training, per-sample attacks) get disjoint, platform-stable streams from a
//! single master seed.

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The RNG used throughout the crate. ChaCha is counter-based and produces the
/// same stream on every platform, including wasm.
pub type Rng = ChaCha8Rng;

/// Builds the crate RNG directly from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a sub-seed from `(seed, tag, index)` by hashing, so that distinct
/// tags or indices give statistically independent streams.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// Convenience: RNG for a derived stream.
pub fn derived_rng(seed: u64, tag: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(seed, tag, index))
}
