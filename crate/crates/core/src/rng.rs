//! Seeded randomness.
//!
//! Every random decision in the crate draws from [`Rng`], a ChaCha8 stream
//! seeded from a 64-bit value. Sub-seeds are derived with a SplitMix64 mixer so
//! that, for example, the roll-out of instance `j` in iteration `i` gets the
//! same stream no matter which thread runs it.

use rand::SeedableRng;

pub type Rng = rand_chacha::ChaCha8Rng;

/// Identifier written into output headers next to the root seed.
pub const RNG_ALGORITHM: &str = "chacha8-splitmix64";

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `root`; distinct part lists give unrelated seeds.
pub fn derive(root: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
