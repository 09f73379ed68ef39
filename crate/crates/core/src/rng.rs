//! Seeded, splittable random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! `(seed, stream)`. Pair `i` of a dataset always reads stream `i`, so datasets
//! of different sizes built from one seed share their prefix and can be
//! generated in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags for seeds derived from a master seed.
pub mod tag {
    pub const BASIS: u64 = 0x0062_6173_6973;
    pub const TRAIN: u64 = 0x0074_7261_696e;
    pub const VALIDATION: u64 = 0x0076_616c_6964;
    pub const MONTE_CARLO: u64 = 0x6d63_6d63;
    pub const MASKS: u64 = 0x6d61_736b;
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `seed` and a domain/index tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ mix(tag.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// The random stream with index `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
