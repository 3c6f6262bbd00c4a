//! Seed derivation and independent random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by a
//! `(seed, stream)` pair, so results never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping unrelated consumers of one seed apart.
pub mod tag {
    pub const SKETCH_HASH: u64 = 0x01;
    pub const MIXING: u64 = 0x02;
    pub const PROJECTION: u64 = 0x03;
    pub const THETA_INIT: u64 = 0x10;
    pub const SPSA_BLOCK: u64 = 0x11;
    pub const SPSA_DELTA: u64 = 0x12;
    pub const SPSA_SHOTS: u64 = 0x13;
    pub const REFIT_SHOTS: u64 = 0x14;
    pub const KMEANS: u64 = 0x20;
    pub const GENERATE: u64 = 0x30;
    pub const RFF: u64 = 0x40;
    pub const DATA: u64 = 0x50;
    pub const SPLIT: u64 = 0x51;
    pub const EVAL: u64 = 0x60;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a path of tags.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed), |acc, &t| {
        mix64(acc ^ mix64(t.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

/// Independent generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
