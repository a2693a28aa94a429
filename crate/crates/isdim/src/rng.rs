//! Deterministic stream derivation for reproducible parallel experiments.
//!
//! Every sampling site derives its generator from `(master seed, site tag,
//! index)` by writing the three words straight into a ChaCha key. Streams are
//! therefore independent of thread scheduling: replication `i` sees the same
//! generator no matter which worker runs it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per sampling site.
pub mod tag {
    pub const SAMPLE: u64 = 0x01;
    pub const RHO_MC: u64 = 0x02;
    pub const REPLICATION: u64 = 0x03;
    pub const DATA: u64 = 0x04;
    pub const SWEEP: u64 = 0x05;
}

/// Build the generator for stream `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    // last word left zero; reserved
    ChaCha8Rng::from_seed(key)
}

/// Mix `(seed, a, b)` into one derived seed, for call sites that can only
/// pass a single 64-bit value onward. SplitMix64 finalizer.
pub fn derive(seed: u64, a: u64, b: u64) -> u64 {
    let mut x =
        seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_coordinates_give_identical_streams() {
        let mut a = stream(42, tag::SAMPLE, 7);
        let mut b = stream(42, tag::SAMPLE, 7);
        for _ in 0..100 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }

    #[test]
    fn distinct_coordinates_diverge() {
        let mut a = stream(42, tag::SAMPLE, 7);
        let mut b = stream(42, tag::SAMPLE, 8);
        let mut c = stream(42, tag::RHO_MC, 7);
        let mut d = stream(43, tag::SAMPLE, 7);
        let x = a.gen::<u64>();
        assert_ne!(x, b.gen::<u64>());
        assert_ne!(x, c.gen::<u64>());
        assert_ne!(x, d.gen::<u64>());
    }
}
