//! Deterministic seed derivation.
//!
//! Every random operation in the crate draws from a ChaCha8 stream seeded
//! through these helpers, so a run is reproducible from one base seed no
//! matter how work is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the given bytes; stable across platforms and releases.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer.
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named sub-stream of `base`.
pub fn derive(base: u64, tag: &str) -> u64 {
    mix(base ^ stable_hash(tag.as_bytes()))
}

/// Per-replication seed for simulation studies: a stable hash of the method
/// label, development size, and replication index folded into the base seed.
pub fn replication_seed(base: u64, method: &str, n_dev: usize, replication: usize) -> u64 {
    let mut bytes = Vec::with_capacity(method.len() + 16);
    bytes.extend_from_slice(method.as_bytes());
    bytes.extend_from_slice(&(n_dev as u64).to_le_bytes());
    bytes.extend_from_slice(&(replication as u64).to_le_bytes());
    mix(base ^ stable_hash(&bytes))
}

/// The crate-wide generator: portable, explicitly seeded ChaCha8.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive(7, "cv"), derive(7, "cv"));
        assert_ne!(derive(7, "cv"), derive(7, "eval"));
        assert_ne!(derive(7, "cv"), derive(8, "cv"));
    }

    #[test]
    fn replication_seeds_differ_across_every_axis() {
        let s = replication_seed(1, "weighted", 100, 0);
        assert_eq!(s, replication_seed(1, "weighted", 100, 0));
        assert_ne!(s, replication_seed(1, "weighted", 100, 1));
        assert_ne!(s, replication_seed(1, "weighted", 200, 0));
        assert_ne!(s, replication_seed(1, "naive", 100, 0));
        assert_ne!(s, replication_seed(2, "weighted", 100, 0));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        use rand::Rng;
        let mut r1 = rng(42);
        let mut r2 = rng(42);
        let a: Vec<u64> = (0..4).map(|_| r1.random()).collect();
        let b: Vec<u64> = (0..4).map(|_| r2.random()).collect();
        assert_eq!(a, b);
    }
}
