//! Seed derivation.
//!
//! All randomness in the pipeline flows from one root seed. Components and
//! per-step draws get independent streams via a documented derivation rule:
//!
//! ```text
//! derived = splitmix64(root_seed XOR fnv1a64(tag))
//! ```
//!
//! where `tag` is a path-like string such as `"mask/step=12/item=3"`. The
//! rule is stable across platforms, so any run is reproducible from
//! `(root_seed, tag)` alone — checkpoints never need to serialize RNG state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a component seed from the root seed and a tag.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    splitmix64(root ^ fnv1a64(tag.as_bytes()))
}

/// Seeded stream for one component, via [`derive_seed`].
pub fn stream(root: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag))
}

/// Stream seeded directly by a raw 64-bit seed (for APIs whose contract is
/// "deterministic in seed", e.g. mask plans and codebooks).
pub fn stream_raw(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(7, "mask"), derive_seed(7, "mask"));
        assert_ne!(derive_seed(7, "mask"), derive_seed(8, "mask"));
        assert_ne!(derive_seed(7, "mask"), derive_seed(7, "noise"));
    }

    #[test]
    fn streams_with_same_tag_agree() {
        use rand::Rng;
        let a: u64 = stream(1, "x").gen();
        let b: u64 = stream(1, "x").gen();
        assert_eq!(a, b);
    }
}
