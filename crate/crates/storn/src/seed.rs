//! Deterministic seed fan-out and counter-based random streams.
//!
//! One global seed is hashed together with a component label into a sub-seed
//! (FNV-1a over the label, mixed with the seed through splitmix64). Draw
//! streams within a component are ChaCha8 streams indexed by a counter, so a
//! change in one consumer's draw count never shifts another's.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Sub-seed for a named component: `splitmix64(seed ^ fnv1a64(label))`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label.as_bytes()))
}

/// ChaCha8 generator on stream `stream` of the given seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn sub_seeds_are_stable_and_distinct() {
        assert_eq!(sub_seed(42, "init"), sub_seed(42, "init"));
        assert_ne!(sub_seed(42, "init"), sub_seed(42, "shuffle"));
        assert_ne!(sub_seed(42, "init"), sub_seed(43, "init"));
    }

    #[test]
    fn streams_are_independent_of_other_draw_counts() {
        let mut a = stream_rng(7, 3);
        let mut b = stream_rng(7, 3);
        let _ = stream_rng(7, 2).random::<f64>();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        let mut c = stream_rng(7, 4);
        assert_ne!(stream_rng(7, 3).random::<u64>(), c.random::<u64>());
    }
}
