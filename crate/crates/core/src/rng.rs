//! Counter-keyed random streams.
//!
//! Every stochastic routine draws from a stream identified by a root seed, a
//! purpose label and a tuple of counters (replicate index, greedy step, ...).
//! Streams are a pure function of that key, so results never depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// A node in a tree of named seeds. Deriving a child never perturbs siblings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    key: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree {
            key: splitmix64(root),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child keyed by a purpose label such as `"graph"` or `"traces"`.
    pub fn child(&self, label: &str) -> SeedTree {
        SeedTree {
            key: splitmix64(self.key ^ splitmix64(fnv1a(label))),
        }
    }

    /// Child keyed by a counter.
    pub fn index(&self, i: u64) -> SeedTree {
        SeedTree {
            key: splitmix64(self.key.wrapping_add(splitmix64(i.wrapping_add(GOLDEN)))),
        }
    }

    pub fn rng(&self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut state = self.key;
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// Shorthand for `self.index(i).rng()`.
    pub fn stream(&self, i: u64) -> StreamRng {
        self.index(i).rng()
    }
}
