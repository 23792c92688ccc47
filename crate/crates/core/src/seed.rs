//! Stable per-stage seed derivation.
//!
//! Every random draw in a pipeline descends from one root seed. Stages get
//! their own stream by mixing a stable text label into the root, so a stage
//! can be re-run on its own and still see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tokenizer::fnv1a64;

/// Seeded generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of a named stage from the root seed.
pub fn derive(root: u64, label: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a64(label.as_bytes())))
}

/// Generator for a named stage.
pub fn stage_rng(root: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive(root, label))
}

/// Generator seeded directly.
pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
