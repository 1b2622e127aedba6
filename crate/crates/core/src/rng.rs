//! Seeded randomness.
//!
//! Every random choice in the crate (initialization, shuffling, crop offsets,
//! synthetic audio) draws from SplitMix64 streams, which are platform
//! independent and fully determined by their 64-bit seed.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Seed for an independent sub-stream, e.g. one per epoch or per utterance.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // One SplitMix64 finalizer round over the combined words.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
