//! Deterministic random streams.
//!
//! Every random decision is drawn from a xoshiro256++ generator whose seed
//! is derived from `(run_seed, query_id, stage)` with splitmix64 mixing.
//! Streams therefore never depend on thread scheduling.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng;

/// Stage tag used for ghost-graph searches of a given stage.
pub const GHOST_STAGE_BIT: u64 = 1 << 40;

/// One splitmix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into a single 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    let mut state = 0x0005_EED0_FA11_u64;
    let mut out = 0u64;
    for &w in words {
        state ^= w;
        out = splitmix64(&mut state);
        state = out;
    }
    out
}

/// Generator for a plain seed (datasets, partitions, ghost sampling).
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Per-query stream used by the search kernel.
pub fn query_stream(run_seed: u64, query_id: u64, stage: u64) -> Rng {
    Rng::seed_from_u64(mix(&[run_seed, query_id, stage]))
}
