#![allow(dead_code)]

use mfcontrol::{MeanFieldSystem, RealMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random `d × d` matrix kept well away from singularity.
pub fn well_conditioned(rng: &mut ChaCha8Rng, d: usize) -> RealMatrix {
    random_matrix(rng, d, d, 0.3) + RealMatrix::identity(d, d)
}

pub fn random_system(rng: &mut ChaCha8Rng, d: usize, n: usize, horizon: f64) -> MeanFieldSystem {
    MeanFieldSystem::builder(d, n, horizon)
        .a1(random_matrix(rng, d, d, 0.5))
        .a2(random_matrix(rng, d, d, 0.5))
        .b1(random_matrix(rng, d, n, 1.0))
        .b2(random_matrix(rng, d, n, 1.0))
        .c(random_matrix(rng, d, d, 0.5))
        .d1(random_matrix(rng, d, n, 0.5))
        .d2(random_matrix(rng, d, n, 0.5))
        .build()
        .unwrap()
}
