//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream identified by a
//! `(seed, stream)` pair, so results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids reserved for the different consumers of one seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const DATA: u64 = 1;
    pub const OUTLIERS: u64 = 2;
    pub const NOISE: u64 = 3;
    /// Per-epoch shuffles use `SHUFFLE_BASE + epoch`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
    /// Per-trial / per-pair Monte Carlo streams use `MC_BASE + index`.
    pub const MC_BASE: u64 = 1 << 48;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
