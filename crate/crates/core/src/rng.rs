//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`RngContract`]: a 64-bit seed
//! plus a stream id, realised as a ChaCha8 generator. ChaCha exposes 2^64
//! independent streams per seed, so Monte Carlo jobs pick their own stream and
//! stay reproducible no matter how they are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngContract {
    pub seed: u64,
    pub stream: u64,
}

impl RngContract {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngContract { seed, stream }
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Same seed, different stream.
    pub fn with_stream(&self, stream: u64) -> Self {
        RngContract {
            seed: self.seed,
            stream,
        }
    }
}

/// SplitMix64 finaliser, used to derive well-spread child seeds from a master
/// seed and a job coordinate.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and an ordered list of coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(master), |acc, &c| mix64(acc ^ mix64(c)))
}
