//! Deterministic random streams.
//!
//! A [`SeedStream`] is a 64-bit key. Sub-streams are derived by hashing a tag
//! into the key, and each gate gets its own generator keyed on its index, so a
//! gate's randomness is a pure function of `(master_seed, tags, gate_index)`.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type GateRng = Xoshiro256PlusPlus;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            key: mix64(master_seed),
        }
    }

    /// Independent child stream identified by `tag`.
    pub fn fork(self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_add(0x632B_E59B_D9B4_E019))),
        }
    }

    #[inline]
    pub fn gate_rng(self, gate_index: u64) -> GateRng {
        GateRng::seed_from_u64(mix64(self.key ^ mix64(gate_index)))
    }
}

/// Stream tags used by the subcommands.
pub mod tags {
    pub const SIMULATE: u64 = 1;
    pub const SCAN: u64 = 2;
    pub const CALIBRATION: u64 = 3;
    pub const IMAGE: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
}
