//! Per-path random streams.
//!
//! Every path owns an independent ChaCha stream keyed by `(master seed, path index)`.
//! ChaCha is counter based, so the draws of path `i` never depend on which worker
//! simulates it or in what order paths are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for path `index` under `seed`.
pub fn path_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}
