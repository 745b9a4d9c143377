//! Deterministic seed derivation.
//!
//! Every random stream in an experiment is seeded from
//! `(master_seed, purpose tag, stream id)` so that independent stages and
//! parallel cells each own a private, reproducible RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a purpose tag and a stream index.
pub fn derive(master: u64, tag: &str, stream: u64) -> u64 {
    let mut h = splitmix64(master);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ stream)
}

/// A ChaCha stream seeded via [`derive`].
pub fn rng(master: u64, tag: &str, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, stream))
}
