//! Seeded, splittable random streams.
//!
//! Every randomized routine takes an [`RngState`] by reference and builds its
//! own ChaCha8 generator from it. The pair `(seed, stream)` fully determines
//! the output, so parallel work derives child states by stream id instead of
//! sharing one generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// Derive an unrelated state for a named sub-task. The child seed mixes
    /// the parent seed, stream and tag, so `fork(a) != fork(b)` for `a != b`.
    pub fn fork(self, tag: u64) -> Self {
        let mixed = splitmix64(splitmix64(self.seed ^ splitmix64(self.stream)) ^ tag);
        Self {
            seed: mixed,
            stream: 0,
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
