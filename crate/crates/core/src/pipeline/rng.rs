//! Independent random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Order = 2,
    Augment = 3,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (which as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
