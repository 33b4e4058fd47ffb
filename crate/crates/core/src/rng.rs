//! Deterministic RNG stream derivation.
//!
//! Every stochastic routine in the crate derives its generator from a master
//! seed plus a stream label and indices (user, epoch, batch, ...). Streams are
//! therefore independent of scheduling order and worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels. Keeping them in one place avoids accidental collisions
/// between unrelated consumers of the same master seed.
pub mod stream {
    pub const SIMULATE_USER: u64 = 1;
    pub const FIT_SHUFFLE: u64 = 2;
    pub const FIT_BATCH: u64 = 3;
    pub const FIT_EVAL: u64 = 4;
    pub const PREDICT_THETA: u64 = 5;
    pub const INGEST_SHUFFLE: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent ChaCha stream from a master seed and a tag path.
pub fn stream_rng(master_seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(master_seed ^ 0xA076_1D64_78BD_642F);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0x2545_F491_4F6C_DD1D)));
    }
    ChaCha8Rng::seed_from_u64(state)
}
