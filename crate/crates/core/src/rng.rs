//! Deterministic, platform-independent random streams.
//!
//! Every stream is a ChaCha8 generator seeded from a 64-bit value. Seeds for
//! sub-streams are derived with [`mix`], a SplitMix64 finalizer applied to the
//! running state xor each tag, so the derivation is stable across platforms
//! and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RandomStream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of tags into a seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// FNV-1a over the bytes of a token; used to turn algorithm names into tags.
pub fn token_tag(token: &str) -> u64 {
    token.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn stream(seed: u64) -> RandomStream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, tags: &[u64]) -> RandomStream {
    stream(mix(seed, tags))
}
