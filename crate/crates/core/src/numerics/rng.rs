//! Counter-based random streams.
//!
//! A [`RngStream`] is a plain value naming a substream of a ChaCha8 generator:
//! the master seed picks the key and the stream id picks the ChaCha stream.
//! Any piece of work that needs randomness derives its own stream from a path
//! of tags (trial, client, purpose), so results never depend on which worker
//! ran first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

/// Purpose tags mixed into stream ids.
pub mod purpose {
    pub const POPULATION: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const ATTACK: u64 = 3;
    pub const TASK: u64 = 4;
    pub const KAPPA: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const CLIENT: u64 = 7;
    pub const CELL: u64 = 8;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            stream_id: 0,
        }
    }

    pub fn with_stream(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Child stream keyed by `tag`. Distinct tags give unrelated streams.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Child stream keyed by a path of tags, applied left to right.
    pub fn derive_path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.derive(t))
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
