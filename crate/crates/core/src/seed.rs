//! Seed derivation tree.
//!
//! Every random stream is keyed by a path of integers below the root seed:
//! `derive(derive(root, command), resample)`. Each step is one SplitMix64
//! round over `parent ^ golden * (index + 1)`, so sibling streams are
//! decorrelated and the tree is reproducible for any thread count.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed `index` of `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ GOLDEN.wrapping_mul(index.wrapping_add(1)))
}

/// Follow a path of indices from `root`.
pub fn derive_path(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(root, |s, &i| derive(s, i))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream labels used by the command layer.
pub mod stream {
    pub const SCHMIDT: u64 = 1;
    pub const TOMOGRAPHY: u64 = 2;
    pub const BELL: u64 = 3;
    pub const VERIFY: u64 = 4;
    pub const COUNTS: u64 = 10;
    pub const MONTE_CARLO: u64 = 11;
    pub const PROCRUSTES: u64 = 12;
}
