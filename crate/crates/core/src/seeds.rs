//! Seed splitting.
//!
//! Every random consumer of a run gets its own stream, derived from the
//! master seed, a consumer tag and an index (usually the epoch):
//! `splitmix64(splitmix64(master ^ tag) ^ index)`. Changing how one consumer
//! draws numbers therefore never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random consumers of an experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic data generation and train/test splitting.
    Data,
    /// Initial topology and weights.
    Init,
    /// Mini-batch order.
    Shuffle,
    /// Dropout masks.
    Dropout,
    /// Regrowth sampling and regrown weights.
    Evolution,
    /// Training-set subsampling.
    Subsample,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x6461_7461,
            Stream::Init => 0x696e_6974,
            Stream::Shuffle => 0x7368_7566,
            Stream::Dropout => 0x6472_6f70,
            Stream::Evolution => 0x6576_6f6c,
            Stream::Subsample => 0x7375_6273,
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream.tag()) ^ index)
}

pub fn rng_for(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
