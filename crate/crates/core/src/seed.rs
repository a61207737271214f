//! Deterministic RNG substreams.
//!
//! Every random draw in the pipeline comes from a generator whose seed is a pure
//! function of the master seed and a path of integer tags (variant index,
//! iteration, purpose, ...). Work can therefore be scheduled on any number of
//! threads without changing a single sampled value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags, so two substreams at the same position never collide.
pub mod stream {
    pub const SCENE: u64 = 1;
    pub const SAMPLER: u64 = 2;
    pub const SAMPLER_RETRY: u64 = 3;
    pub const RELABEL: u64 = 4;
    pub const EVALUATE: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a tag path.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(master: u64, tags: &[u64]) -> Rng {
    rng(derive(master, tags))
}
