//! Counter-based random streams derived from one 64-bit experiment seed.
//!
//! Every consumer of randomness names its stream by `(purpose, iteration,
//! index)`. Streams are independent of the order in which they are created,
//! so trace samples can be drawn in any order (or concurrently) and still
//! reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Reset = 1,
    Environment = 2,
    TaskAction = 3,
    SafeAction = 4,
    ShieldSample = 5,
    Imagination = 6,
    Estimate = 7,
    Instance = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub purpose: Purpose,
    pub iteration: u64,
    pub index: u64,
}

impl StreamId {
    pub fn new(purpose: Purpose, iteration: u64, index: u64) -> Self {
        StreamId {
            purpose,
            iteration,
            index,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root of the stream tree for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        SeedStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn key(&self, id: StreamId) -> u64 {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ id.purpose as u64);
        h = splitmix64(h ^ id.iteration);
        splitmix64(h ^ id.index)
    }

    pub fn rng(&self, id: StreamId) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key(id))
    }

    pub fn stream(&self, purpose: Purpose, iteration: u64, index: u64) -> ChaCha8Rng {
        self.rng(StreamId::new(purpose, iteration, index))
    }
}
