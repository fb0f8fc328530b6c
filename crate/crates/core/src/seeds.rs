//! Seed derivation. One 64-bit master seed fans out into independent
//! streams through a splitmix-style hash, so every run is reproducible from
//! the master seed alone and no two streams ever share state.
//!
//! Layout: `master -> (beta index, chain index) -> {environment, agent,
//! sampler} -> per-rollout`. Each arrow is a [`derive`] call with a fixed
//! tag, documented at the call sites via the constants below.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per purpose a chain seed splits into.
pub const STREAM_ENV: u64 = 1;
pub const STREAM_AGENT: u64 = 2;
pub const STREAM_MCMC: u64 = 3;
pub const STREAM_INIT: u64 = 4;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ GOLDEN.wrapping_mul(tag.wrapping_add(1)))
}

/// Seed for one sampling chain within one inverse temperature.
pub fn chain_seed(master: u64, beta_index: usize, chain_index: usize) -> u64 {
    derive(derive(master, beta_index as u64), 0x1000 + chain_index as u64)
}

/// A generator seeded from a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
