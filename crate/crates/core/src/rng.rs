//! Seeded ChaCha8 streams.
//!
//! Every generation run owns one stream. Sweep cells derive their seed as
//! `mix_seed(seed, task_id, config_id)`, which chains the SplitMix64
//! finalizer over the three inputs:
//!
//! ```text
//! mix(seed, a, b) = fmix(fmix(fmix(seed) ^ a) ^ b)
//! fmix(z) = z += 0x9E3779B97F4A7C15;
//!           z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!           z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//!           z ^ (z >> 31)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b)
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
