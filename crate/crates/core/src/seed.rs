//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed mixed from a base seed and a list of tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `base` with `tags` into a new seed. Different tag lists give
/// statistically independent streams.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    rng(derive(base, tags))
}

// Stream tags. Kept in one place so no two call sites collide by accident.
pub(crate) const TAG_INIT: u64 = 0x11;
pub(crate) const TAG_SHUFFLE: u64 = 0x12;
pub(crate) const TAG_MEANS: u64 = 0x21;
pub(crate) const TAG_SAMPLES: u64 = 0x22;
pub(crate) const TAG_DISJOINT: u64 = 0x23;
pub(crate) const TAG_SHARD: u64 = 0x31;
pub(crate) const TAG_RELABEL: u64 = 0x32;
pub(crate) const TAG_LAZY: u64 = 0x41;
pub(crate) const TAG_SHADOW: u64 = 0x51;
pub(crate) const TAG_TRIAL: u64 = 0x61;
pub(crate) const TAG_CALIBRATION: u64 = 0x62;
pub(crate) const TAG_DATA: u64 = 0x63;
pub(crate) const TAG_MODEL: u64 = 0x64;
pub(crate) const TAG_REQUEST: u64 = 0x65;
pub(crate) const TAG_BEHAVIOR: u64 = 0x66;
pub(crate) const TAG_AUDIT: u64 = 0x67;
