//! Deterministic seed derivation for named random substreams.
//!
//! Every random quantity in the toolkit is drawn from a `ChaCha8Rng` whose
//! seed is derived from one master seed plus a path of labels, so results do
//! not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A position in the seed tree. Cheap to copy; children are derived by
/// name or by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self(splitmix64(master))
    }

    pub fn named(self, name: &str) -> Self {
        Self(splitmix64(self.0 ^ fnv1a(name)))
    }

    pub fn index(self, i: u64) -> Self {
        Self(splitmix64(self.0.wrapping_add(i.wrapping_mul(0xd1b5_4a32_d192_ed03))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
