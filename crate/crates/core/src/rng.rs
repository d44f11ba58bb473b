//! Seed derivation. Every stochastic routine takes an explicit `u64` seed and
//! builds its own ChaCha stream, so results never depend on call order across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed for `(stream, index)` under `seed`.
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)).wrapping_add(index))
}

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod stream {
    pub const DEVICE: u64 = 1;
    pub const DEFECTS: u64 = 2;
    pub const FORMING: u64 = 3;
    pub const NEURON_FAULTS: u64 = 4;
    pub const READ_NOISE: u64 = 5;
    pub const IMPORT_NOISE: u64 = 6;
    pub const INIT: u64 = 7;
    pub const SHUFFLE: u64 = 8;
    pub const BOUNDS: u64 = 9;
}
