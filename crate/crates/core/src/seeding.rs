//! Deterministic seed derivation.
//!
//! Every random stream in the crate is derived from a root seed through
//! [`derive_seed`], so reruns with the same configuration are bit-identical
//! regardless of platform or crate version.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; a cheap, well-distributed 64-bit mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `root` and a sequence of stream tags.
///
/// Tags distinguish streams (e.g. per-game, per-restart); the same
/// `(root, tags)` pair always yields the same seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &tag in tags {
        state = splitmix64(state ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// A seeded RNG for the given root seed and stream tags.
pub fn rng_for(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn rng_streams_differ_across_tags() {
        use rand::Rng;
        let a: f64 = rng_for(42, &[0]).gen();
        let b: f64 = rng_for(42, &[1]).gen();
        assert_ne!(a, b);
    }
}
