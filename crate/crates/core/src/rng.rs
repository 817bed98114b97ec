//! Seeded random streams.
//!
//! Every random draw in a simulation comes from a [`ChaCha8Rng`] whose seed is
//! derived from the master seed and a path of counters (run, block, purpose).
//! Derivation is a pure function, so parallel execution order cannot change
//! which numbers a given block sees.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// Stream purposes, mixed into the derived seed.
pub mod stream {
    pub const GEOMETRY: u64 = 1;
    pub const ESTIMATION_BLOCK: u64 = 2;
    pub const EVALUATION_BLOCK: u64 = 3;
    pub const ALLOCATION: u64 = 4;
    pub const RUN: u64 = 5;
    pub const SWEEP_POINT: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a counter path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, path))
}

/// Circularly-symmetric complex normal with unit variance, `NC(0, 1)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Unit-modulus symbol with uniformly random phase.
pub fn unit_phase<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Complex64::from_polar(1.0, phase)
}
