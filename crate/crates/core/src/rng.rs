//! Seeded random streams.
//!
//! Each parallel task draws from its own ChaCha stream keyed by `(seed, task)`,
//! so results do not depend on how tasks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream number `task` under the global `seed`.
pub fn stream(seed: u64, task: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(task);
    r
}

/// Derives a child seed, for handing a sub-computation its own seed space.
pub fn child_seed(seed: u64, task: u64) -> u64 {
    use rand::RngCore;
    stream(seed, task ^ 0x9e37_79b9_7f4a_7c15).next_u64()
}
