//! Deterministic seed streams.
//!
//! Every random draw is taken from a generator seeded by mixing a base seed with
//! a tuple of tags (purpose, round, epoch, step, ...). Draws for one purpose never
//! shift the sequence seen by another, and resuming at any step needs only the
//! base seed and the counters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    MaskPick = 2,
    Epsilon = 3,
    MeasurementNoise = 4,
    Init = 5,
    Scenes = 6,
    Masks = 7,
    Trial = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, purpose: Stream, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, purpose, tags))
}

pub fn stream_seed(base: u64, purpose: Stream, tags: &[u64]) -> u64 {
    let mut all = Vec::with_capacity(tags.len() + 1);
    all.push(purpose as u64);
    all.extend_from_slice(tags);
    derive_seed(base, &all)
}
