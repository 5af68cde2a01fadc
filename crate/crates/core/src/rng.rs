//! Counter-based random substreams.
//!
//! A master seed is split into independent substreams keyed by structured
//! tags such as (step, task index, rollout index, resample index). The split
//! is a pure function of the seed and the tag path, so results do not depend
//! on scheduling order or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags keeping unrelated substreams disjoint.
pub mod scopes {
    pub const TREE_GEN: u64 = 1;
    pub const TASK_OBS: u64 = 2;
    pub const POLICY_INIT: u64 = 3;
    pub const ROLLOUT: u64 = 4;
    pub const RESAMPLE: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const THEORY: u64 = 7;
}

/// A point in the substream tree. Cheap to copy; `child` derives a new
/// independent point and `rng` materializes a generator at the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            state: splitmix64(seed ^ 0xA076_1D64_78BD_642F),
        }
    }

    pub fn child(&self, tag: u64) -> Self {
        Self {
            state: splitmix64(self.state ^ splitmix64(tag.wrapping_mul(0xE703_7ED1_A0B4_28DB))),
        }
    }

    /// Derives a child for each tag in order.
    pub fn descend(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.child(t))
    }

    pub fn seed_u64(&self) -> u64 {
        splitmix64(self.state)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut z = self.state;
        for chunk in seed.chunks_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
