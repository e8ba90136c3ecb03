//! Seed splitting.
//!
//! Every random stream in a run is derived from one root seed and a path of
//! labels, e.g. `derive(root, &[ROLLOUT, iteration, index])`. The derivation
//! folds each label into the state with the SplitMix64 finalizer, so a stream
//! depends only on its own path and never on how many other streams were drawn
//! before it. This keeps results identical whether rollouts run sequentially
//! or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ROLLOUT: u64 = 0x524f_4c4c;
pub const RESET: u64 = 0x5253_4554;
pub const NOISE: u64 = 0x4e4f_4953;
pub const GMM_INIT: u64 = 0x474d_4d49;
pub const CEM_SAMPLE: u64 = 0x4345_4d53;
pub const EVAL: u64 = 0x4556_414c;
pub const SCENARIO: u64 = 0x5343_454e;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `root` and a label path.
pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &label| {
        splitmix64(acc ^ splitmix64(label))
    })
}

/// A ChaCha8 generator for the stream at `path` below `root`.
pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, path))
}
