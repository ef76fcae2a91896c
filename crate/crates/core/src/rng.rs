//! Counter-style stream derivation.
//!
//! Every random draw in the crate comes from a [`StreamId`], a 64-bit label
//! obtained by hashing a master seed with a path of `(role, index)` pairs.
//! A stream is turned into a ChaCha8 generator on demand, so a rollout is a
//! pure function of its stream id and results do not depend on which thread
//! (or in which order) the streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Roles used when deriving child streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Iteration = 1,
    Perturbation = 2,
    DirectionK = 3,
    DirectionL = 4,
    Rollout = 5,
    Common = 6,
    Agent = 7,
    Variations = 8,
    Replicate = 9,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamId {
    pub fn root(master_seed: u64) -> Self {
        StreamId(splitmix64(master_seed ^ 0x6c71_6d66_7067_0001))
    }

    pub fn child(self, role: Role, index: u64) -> Self {
        let h = splitmix64(self.0 ^ splitmix64(role as u64));
        StreamId(splitmix64(h ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
