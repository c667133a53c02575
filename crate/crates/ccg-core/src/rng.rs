//! Seed handling.
//!
//! A single user-facing seed drives the whole pipeline. Each stage XORs a
//! fixed tag into it before seeding its generator, so the SAE initialisation,
//! graph initialisation, CFS target draws and bootstrap resamples consume
//! independent streams and a change in one stage never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STAGE_SYNTH: u64 = 0x5f17_9b2d_c4a1_0e83;
pub const STAGE_SAE: u64 = 0x53ae_c0de_71b9_2a45;
pub const STAGE_GRAPH: u64 = 0x6e07_ea25_b3c7_98d1;
pub const STAGE_CFS_CAUSAL: u64 = 0xcf5c_a05e_19d3_407b;
pub const STAGE_CFS_RANDOM: u64 = 0xcf5d_0a7d_66af_8c29;
pub const STAGE_BOOTSTRAP: u64 = 0xb007_57a9_42e5_d16f;
pub const STAGE_PROBE: u64 = 0x9805_e1ab_7c33_f0a7;

/// Generator for one pipeline stage.
pub fn stage_rng(seed: u64, stage_tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stage_tag)
}

/// Generator for one unit of key-indexed work (bootstrap replicate, sweep
/// cell). Work units can run in any order, or in parallel, without changing
/// what each one draws.
pub fn keyed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
