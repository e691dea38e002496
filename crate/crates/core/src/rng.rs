//! Addressable random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream picked out
//! by a `(seed, stream)` pair, so replications can run in any order on any
//! number of threads and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for replication `rep` of experiment phase `phase`.
pub fn stream_id(phase: u32, rep: u32) -> u64 {
    ((phase as u64) << 32) | rep as u64
}
