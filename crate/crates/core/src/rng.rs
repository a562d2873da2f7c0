//! Counter-based random streams split from one root seed.
//!
//! Each consumer gets its own ChaCha stream keyed by the root seed and
//! addressed by `(purpose, index)`, so adding a consumer never shifts the
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Tasks = 2,
    Subsets = 3,
    EvalTasks = 4,
    EvalSubsets = 5,
    Misc = 6,
}

/// The `index`-th stream for `purpose` under `root`.
pub fn stream(root: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(((purpose as u64) << 56) ^ (index & ((1 << 56) - 1)));
    rng
}
