//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose key is derived
//! from a master seed and a path of indices (replicate, permutation, grid
//! point, ...). Results therefore do not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name recorded in outputs so that draws can be replayed.
pub const GENERATOR: &str = "chacha8-splitmix64";

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `path` under `seed`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |h, &p| {
        splitmix64(h ^ splitmix64(p ^ 0x632b_e59b_d9b4_e019))
    })
}

pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let s = derive(seed, path);
    let mut key = [0u8; 32];
    let mut h = s;
    for chunk in key.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// A seed from the operating system, for callers that did not supply one.
pub fn entropy_seed() -> u64 {
    rand::random()
}
