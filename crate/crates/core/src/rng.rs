//! Seeded, index-addressed random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, device, path, role)`.
//! The key is expanded with SplitMix64, so stream `(s, d, p, r)` depends only
//! on its own coordinates: adding devices or paths never perturbs an
//! existing stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct roles on the same indices never
/// share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    SystematicField = 1,
    PairJitter = 2,
    RandomVariation = 3,
    SampleMask = 4,
    KMeans = 5,
    SharedOutlier = 6,
    Test = 99,
}

/// Marker for stream coordinates that do not apply.
pub const NONE: u64 = u64::MAX;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, device: u64, path: u64, role: Role) -> ChaCha8Rng {
    let mut state = seed;
    for word in [device, path, role as u64] {
        state = splitmix64(&mut state) ^ word;
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
