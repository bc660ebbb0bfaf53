//! Counter-based random draws.
//!
//! Every draw is addressed by `(seed, family, index)`: a fresh ChaCha
//! stream is keyed by the seed and selected by the family/index pair, so a
//! parameter's value does not depend on the order in which other
//! parameters were drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for one `(family, index)` address.
    pub fn stream(&self, family: u32, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((family as u64) << 48) ^ index);
        rng
    }

    /// Uniform draw in `[lo, hi]`; degenerate intervals return `lo`.
    pub fn uniform(&self, family: u32, index: u64, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        let u: f64 = self.stream(family, index).random();
        lo + (hi - lo) * u
    }
}
