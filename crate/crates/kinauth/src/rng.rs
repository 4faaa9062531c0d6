//! Seeded random-number helpers.
//!
//! Every stochastic choice in the crate (splits, pair sampling, shuffles,
//! init, mining, dropout) draws from a ChaCha8 stream created here. Sub-streams
//! are derived from a master seed plus a few context tags, so independent
//! stages can be re-run in isolation without replaying the whole pipeline.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a master seed and context tags into one 64-bit sub-seed
/// (splitmix64-style finalization, applied per tag).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = master ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        s = s.wrapping_add(t).wrapping_add(0x9e37_79b9_7f4a_7c15);
        s = (s ^ (s >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        s = (s ^ (s >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        s ^= s >> 31;
    }
    s
}

/// Deterministic generator for a given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for a derived sub-stream.
pub fn sub_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    rng(derive_seed(master, tags))
}
