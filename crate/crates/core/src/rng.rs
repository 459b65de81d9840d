//! Splittable random streams.
//!
//! Every Monte Carlo ensemble member `k` draws from stream `k` of a ChaCha8
//! generator keyed by the master seed, so results do not depend on how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `index` derived from `master_seed`.
pub fn substream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// A second family of streams for the same seed, disjoint from [`substream`]
/// (used where one ensemble needs two unrelated sources, e.g. data noise and
/// fit restarts).
pub fn auxiliary_stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ 0x9E37_79B9_7F4A_7C15);
    rng.set_stream(index);
    rng
}
