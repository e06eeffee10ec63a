//! Deterministic seed derivation.
//!
//! Per-item RNG states are derived from a master seed and a stable item
//! identifier, never from shared mutable state, so work can be split across
//! threads in any order and still produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a string label into a seed (FNV-1a followed by a splitmix finalizer).
pub fn derive(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h))
}

/// Mixes an integer index into a seed.
pub fn derive_index(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}
