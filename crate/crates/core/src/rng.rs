//! Reproducible random number streams.
//!
//! All stochastic routines draw from ChaCha12, a counter-mode stream cipher:
//! the generator state is (key, stream id, block counter), so a master seed
//! plus a task index fully determines every draw. Parallel tasks get
//! non-overlapping streams by construction, and rerunning any task with the
//! same (master seed, task index) reproduces its output bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The stream generator used throughout the crate.
pub type Stream = ChaCha12Rng;

/// Stream for a top-level run keyed by the master seed alone.
pub fn master_stream(master_seed: u64) -> Stream {
    ChaCha12Rng::seed_from_u64(master_seed)
}

/// Independent stream for task `task_index` under `master_seed`.
///
/// Uses the cipher's stream-id word, so streams for distinct task indices
/// never overlap regardless of how many values each task draws.
pub fn task_stream(master_seed: u64, task_index: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(task_index.wrapping_add(1));
    rng
}
