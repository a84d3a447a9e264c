//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is addressed by a `(master, run, purpose)`
//! triple and hashed into an independent ChaCha8 key. No generator is ever shared
//! between runs, so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the derived key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Mdp = 1,
    ExpertData = 2,
    ImperfectData = 3,
    ActionFill = 4,
    Synthetic = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, run: u64, purpose: Purpose) -> u64 {
    let a = mix64(master.wrapping_add(GOLDEN));
    let b = mix64(a ^ run.wrapping_mul(GOLDEN).wrapping_add(0x632B_E59B_D9B4_E019));
    mix64(b ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(master: u64, run: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, run, purpose))
}
