//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 generator whose key is derived from a tuple of
//! integers (base seed, path index, component, ...). Streams for different
//! tuples are independent, so ensembles can be evaluated in any order or in
//! parallel and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// Domain-separation tags for the different consumers of randomness.
pub mod tag {
    pub const FBM: u64 = 0x0f_b0;
    pub const FBM_LEFT: u64 = 0x0f_b1;
    pub const FBM_RIGHT: u64 = 0x0f_b2;
    pub const CHAIN: u64 = 0xc4_a1;
    pub const SDE: u64 = 0x5d_e0;
    pub const KERNEL: u64 = 0x6e_e1;
    pub const PERMUTATION: u64 = 0x9e_37;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Returns the stream keyed by `keys`.
pub fn stream(keys: &[u64]) -> Stream {
    let mut state = 0x243f_6a88_85a3_08d3_u64 ^ keys.len() as u64;
    for &k in keys {
        state = splitmix64(state ^ splitmix64(k));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Fills `out` with independent standard normal draws.
pub fn fill_normal(rng: &mut Stream, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

pub fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}
