//! Seed derivation. Every random stream in a run is a pure function of the
//! root seed and a small tuple of indices, so parallel evaluation order never
//! changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT_DOMAIN: u64 = 1;
pub const SHUFFLE_DOMAIN: u64 = 2;
pub const TRAIN_NOISE_DOMAIN: u64 = 3;
pub const EVAL_NOISE_DOMAIN: u64 = 4;
pub const SHOTS_DOMAIN: u64 = 5;
pub const GRADCHECK_DOMAIN: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(root: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, parts))
}
