//! Seeded randomness. Every random draw in the lab flows from an explicit
//! 64-bit seed through [`Rng64`]; sub-streams are derived by mixing a tag
//! into the parent seed so independent consumers never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a stream tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = mix64(seed);
    for b in tag.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    h
}

/// Derives a child seed from `seed`, a tag and an index.
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    mix64(derive_seed(seed, tag) ^ mix64(index.wrapping_add(1)))
}

pub fn rng_from(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, tag: &str) -> Rng64 {
    Rng64::seed_from_u64(derive_seed(seed, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| rng_for(7, "x").random()).collect();
        let mut r1 = rng_for(7, "x");
        let mut r2 = rng_for(7, "y");
        let x: u64 = r1.random();
        let y: u64 = r2.random();
        assert_eq!(a[0], x);
        assert_ne!(x, y);
        assert_ne!(derive_indexed(1, "t", 0), derive_indexed(1, "t", 1));
    }
}
