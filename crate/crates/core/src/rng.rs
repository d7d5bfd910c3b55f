//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator. Independent tasks
//! (subjects, networks, training producers) derive their own stream from a
//! root seed and a path of indices, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of stream indices.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn substream(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, path))
}
