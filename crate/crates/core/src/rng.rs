//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by `(master seed, stage name, index)`, so a batch produces the
//! same values whichever worker handles which index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the stage name.
fn stage_tag(stage: &str) -> u64 {
    stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ stage_tag(stage)).wrapping_add(splitmix64(index)))
}

pub fn stream(master: u64, stage: &str, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stage, index))
}
