//! Seed derivation.
//!
//! Every random stream in a run is keyed by `(master seed, purpose tag)` so that
//! consuming more numbers from one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes used by the training loop.
pub mod purpose {
    pub const ENV: &str = "env";
    pub const INIT: &str = "init";
    pub const ACTION: &str = "action";
    pub const MINIBATCH: &str = "minibatch";
    pub const EXPLORE: &str = "explore";
    pub const BOOTSTRAP: &str = "bootstrap";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sub-seed for `tag` under `master`.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a(tag))
}

/// Sub-seed for the `index`-th member of a family (env index, bootstrap replicate, ...).
pub fn derive_indexed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(master, tag) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng_for(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag))
}
