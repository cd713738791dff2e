//! Reproducible random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed plus a tuple of tags (purpose, client, round, step). Streams are thus
//! independent of scheduling and of how many other streams were drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags keeping unrelated streams apart.
pub mod purpose {
    pub const LANDMARK_INIT: u64 = 1;
    pub const DATA_NOISE: u64 = 2;
    pub const GRADIENT_NOISE: u64 = 3;
    pub const VARIABLE_NOISE: u64 = 4;
    pub const PARTITION: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    pub const BLOBS: u64 = 7;
    pub const EMBED_INIT: u64 = 8;
    pub const KMEANS: u64 = 9;
    pub const SPLIT: u64 = 10;
    pub const GAMMA_SAMPLE: u64 = 11;
    pub const SUBSPACE: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a run seed with stream tags into a 64-bit stream key.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}
