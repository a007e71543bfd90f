//! Counter-based randomness.
//!
//! Every random quantity in a release is a pure function of a key tuple
//! (seed, domain tag, coordinates...). Results therefore do not depend on
//! iteration order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep key spaces of unrelated draws apart.
pub mod tag {
    pub const CELL_NOISE: u64 = 0x6f64_6365_6c6c;
    pub const POPULATION_NOISE: u64 = 0x706f_7075_6c61;
    pub const CAP: u64 = 0x6361_7070_696e;
    pub const SYNTH_GEOMETRY: u64 = 0x6765_6f6d;
    pub const SYNTH_SUBSCRIBER: u64 = 0x7375_6273;
    pub const MIA: u64 = 0x6d69_6120;
    pub const RELEASE: u64 = 0x7265_6c65;
    pub const SIR: u64 = 0x7369_7220;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple to 64 well-mixed bits.
#[inline]
pub fn hash_key(key: &[u64]) -> u64 {
    let mut h = GOLDEN;
    for &k in key {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(GOLDEN)));
    }
    splitmix64(h)
}

/// Uniform draw on the open interval (-1/2, 1/2), keyed by `key`.
///
/// Uses the top 53 bits, offset by half an ulp so neither endpoint occurs.
#[inline]
pub fn centered_uniform(key: &[u64]) -> f64 {
    let bits = hash_key(key) >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64) - 0.5
}

/// Derives a child seed from a parent seed and a key path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut key = Vec::with_capacity(path.len() + 1);
    key.push(seed);
    key.extend_from_slice(path);
    hash_key(&key)
}

/// A sequential stream generator for the parts of the pipeline that need one
/// (sampling without replacement, synthetic data), seeded from a key.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
