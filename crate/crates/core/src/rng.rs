//! Seed derivation.
//!
//! Every random stream is a pure function of the master seed and a path of
//! integers (`[iteration, slot]`, `[TEST_STREAM, task]`, ...). Streams are
//! derived by folding the path through SplitMix64, so the result never
//! depends on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for meta-training task draws.
pub const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
/// Stream tag for held-out test task draws.
pub const TEST_STREAM: u64 = 0x7465_7374_0000_0000;

/// One SplitMix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `seed_{k+1} = splitmix64(seed_k ^ splitmix64(path_k))`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}
