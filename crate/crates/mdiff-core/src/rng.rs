//! Deterministic random streams.
//!
//! Every stochastic operation takes either an explicit seed or an explicit
//! `&mut Stream`. Sub-streams (per task, per trajectory, per training step)
//! are derived from a base seed with a SplitMix64 mix, so any point of a
//! run can be reconstructed without replaying the stream history — this is
//! what makes `--resume` bit-exact and parallel rollouts order-independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// The one RNG used everywhere.
pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, cheap, stable across platforms.
#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and an index/tag.
pub fn derive(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag))
}

/// Derive a child seed from a base seed and two indices.
pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}

/// Derive a child seed from a base seed and a phase label. FNV-1a over the
/// label bytes keeps phases ("context", "noise", ...) on disjoint streams.
pub fn derive_labeled(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive(base, h)
}

/// A fresh stream for a seed.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw, generated in f64 and narrowed to `S` so the draw
/// sequence is identical across precisions.
pub fn normal<S: Scalar>(rng: &mut Stream) -> S {
    let x: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
    S::from_f64(x)
}

/// Uniform draw in `[lo, hi)`, generated in f64.
pub fn uniform<S: Scalar>(rng: &mut Stream, lo: f64, hi: f64) -> S {
    let x: f64 = rand::Rng::gen_range(rng, lo..hi);
    S::from_f64(x)
}

/// Uniform index in `[0, n)`. Panics if `n == 0`.
pub fn index(rng: &mut Stream, n: usize) -> usize {
    rand::Rng::gen_range(rng, 0..n)
}
