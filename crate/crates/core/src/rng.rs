//! Seeded random number generation.
//!
//! Every stochastic choice in this crate (weight init, splits, shuffles,
//! noise injection) draws from a ChaCha8 generator keyed by a user seed plus
//! a stream identifier, so results are reproducible bit-for-bit across runs
//! and platforms. ChaCha8 is pinned because `rand_chacha` guarantees a
//! stable, portable output sequence for a given key.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping independent uses of the same user seed decorrelated.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const TRAIN_BATCHES: u64 = 4;
    pub const META_BATCHES: u64 = 5;
    pub const BLOBS: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a seed and stream words into a full 256-bit ChaCha8 key via
/// splitmix64, so nearby seeds still yield unrelated generators.
pub fn seeded_rng(seed: u64, words: &[u64]) -> ChaCha8Rng {
    let mut state = seed;
    for &w in words {
        state = splitmix64(&mut state) ^ w.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
