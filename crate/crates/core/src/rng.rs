//! Seeded random streams.
//!
//! Every trial owns its own generator derived from `(master seed, stream)`,
//! so results do not depend on the order in which trials are executed.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// Stream reserved for the quasi-static RIS-BS channel of a sweep.
pub const RIS_BS_STREAM: u64 = 0;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent substream `stream` of the master seed.
pub fn substream(master: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Stream used by Monte Carlo trial `trial` (trial 0 uses stream 1).
pub fn trial_rng(master: u64, trial: usize) -> SimRng {
    substream(master, trial as u64 + 1)
}

/// Stream `stream` of a generator keyed by `(master, key)`.
///
/// Used for draws that must line up across sweep points (same noise shape,
/// different scale) while staying independent of the channel draws.
pub fn keyed_rng(master: u64, key: u64, stream: u64) -> SimRng {
    substream(mix(master ^ mix(key.wrapping_add(0x9e37_79b9_7f4a_7c15))), stream)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Circularly symmetric complex Gaussian sample with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
