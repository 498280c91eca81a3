//! Seeded random streams.
//!
//! Every pipeline stage draws from its own ChaCha stream derived from the one
//! user seed, so adding draws in one stage never shifts another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prototypes = 1,
    Queries = 2,
    Questions = 3,
    Triplets = 4,
    Misc = 5,
    /// Per-row noise streams start here; row `i` uses `RowNoise + i`.
    RowNoise = 1 << 32,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    stream_raw(seed, which as u64)
}

pub fn row_stream(seed: u64, row: usize) -> ChaCha8Rng {
    stream_raw(seed, Stream::RowNoise as u64 + row as u64)
}

fn stream_raw(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
