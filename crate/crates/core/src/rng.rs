//! Seeded random sources.
//!
//! All randomness flows through [`Rng`], a ChaCha8 stream whose full state
//! (seed, stream id, word position) can be captured and restored, so a
//! resumed run continues from exactly the same draw.

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a path of indices (epoch, sample, ...) into an
/// independent child seed. Used to give each sample its own stream so the
/// result does not depend on how work is scheduled.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(base ^ 0x5EED_5EED_5EED_5EED);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Serializable generator position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn capture(rng: &Rng) -> RngState {
    RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
}

pub fn restore(state: &RngState) -> Rng {
    let mut rng = Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}

/// Uniform draw on `[lo, hi]`; returns `lo` when the range is empty.
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}

/// Uniform integer on `[lo, hi]` inclusive.
pub fn uniform_int(rng: &mut Rng, lo: i64, hi: i64) -> i64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo..=hi)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Normal draw with standard deviation `std`, resampled until it lies
/// within two standard deviations of zero.
pub fn truncated_normal(rng: &mut Rng, std: f64) -> f64 {
    loop {
        let z = standard_normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}
