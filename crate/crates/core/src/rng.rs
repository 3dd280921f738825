//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded with
//! `seed_from_u64(seed)` and then moved to a fixed stream id with
//! `set_stream`. Distinct consumers use distinct stream ids, so adding draws
//! to one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_FLOW_INIT: u64 = 1;
pub const STREAM_DENSITY_INIT: u64 = 2;
pub const STREAM_BATCH_A: u64 = 3;
pub const STREAM_BATCH_B: u64 = 4;
/// Mini-batches of the `k`-th dataset in a density fit use `STREAM_FIT_BATCH + k`.
pub const STREAM_FIT_BATCH: u64 = 16;
pub const STREAM_BLOBS_A: u64 = 100;
pub const STREAM_BLOBS_B: u64 = 101;
pub const STREAM_MOONS_A: u64 = 110;
pub const STREAM_MOONS_B: u64 = 111;
pub const STREAM_MIXTURE1D: u64 = 120;
pub const STREAM_GRAD_DECAY: u64 = 130;

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
