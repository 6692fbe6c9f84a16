//! Seeded random sources.
//!
//! Every stochastic operation takes an explicit [`PlanRng`]. Sub-streams for
//! parallel work are derived up front so results do not depend on how work is
//! scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PlanRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> PlanRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws a fresh child generator from `parent`.
pub fn fork(parent: &mut PlanRng) -> PlanRng {
    ChaCha8Rng::seed_from_u64(parent.next_u64())
}

/// Mixes a base seed with an index (splitmix64 finalizer).
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exact position of a generator, enough to resume it bit-identically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &PlanRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> PlanRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
