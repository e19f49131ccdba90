//! Seeded random streams.
//!
//! Every random draw in the crate comes from `ChaCha8Rng`. A run seed is
//! mixed with an ordinal (super-batch, epoch, experiment step) through
//! SplitMix64 to get a *derived seed*; inside one selection call, chunk `z`
//! reads from stream `z` of the generator seeded with that derived seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep derived seeds for different consumers apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Selection = 1,
    EpochOrder = 2,
    Corpus = 3,
    LearnerInit = 4,
    Baseline = 5,
}

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `ordinal`-th use of `seed` by `purpose`.
pub fn derive_seed(seed: u64, purpose: Purpose, ordinal: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(purpose as u64)) ^ ordinal)
}

/// Generator for chunk `chunk` of a selection seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
