//! Counter-based random streams.
//!
//! Every consumer derives its generator from `(seed, domain, index, lane)`, so
//! the numbers a rollout or an episode sees never depend on how work was
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains, kept distinct so that e.g. controller noise and
/// exploration never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    MppiNoise = 1,
    Exploration = 2,
    TaskEpisode = 3,
    Shuffle = 4,
    Init = 5,
    Holdout = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a key tuple into 64 bits.
pub fn mix(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain as u64) ^ index)
}

/// Uniform value in `[0, 1)` determined by the key.
pub fn unit_hash(seed: u64, domain: Domain, index: u64) -> f64 {
    (mix(seed, domain, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Independent generator for `(domain, index, lane)`.
    pub fn substream(&self, domain: Domain, index: u64, lane: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, domain, index));
        rng.set_stream(lane);
        rng
    }

    /// A derived key, e.g. one per training iteration.
    pub fn child(&self, domain: Domain, index: u64) -> StreamKey {
        StreamKey { seed: mix(self.seed, domain, index) }
    }
}
