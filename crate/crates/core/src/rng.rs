//! Seed derivation and random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`], a
//! counter-based generator. Independent streams are addressed by
//! `(seed, stream)` pairs: the seed selects the key, the stream selects the
//! ChaCha nonce. Simulated cluster `i` of a replicate always reads stream `i`,
//! so clusters can be generated in any order or in parallel and still match
//! the serial result.
//!
//! Child seeds (per replicate, per arm, per tree) are derived by hashing the
//! parent seed with a tag through SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `seed` and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Generator reading stream `stream` of the key derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
