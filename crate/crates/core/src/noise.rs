//! Counter-based Brownian increments.
//!
//! Every path owns an independent ChaCha8 stream selected by its index, so a
//! path's increments depend only on `(seed, path)` and the step position,
//! never on scheduling or on how many other paths are drawn.

use crate::error::{invalid, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seed used when a caller does not choose one.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Generator for path `path` under `seed`.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// `steps` increments `W(t_{i+1}) − W(t_i)` with common spacing `dt`.
pub fn brownian_increments(seed: u64, path: u64, steps: usize, dt: f64) -> Vec<f64> {
    let mut rng = path_rng(seed, path);
    let scale = dt.sqrt();
    (0..steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Sums consecutive blocks of `factor` increments (the same path on a coarser grid).
pub fn coarsen(increments: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || increments.len() % factor != 0 {
        return Err(invalid(format!(
            "cannot coarsen {} increments by a factor of {factor}",
            increments.len()
        )));
    }
    Ok(increments.chunks(factor).map(|c| c.iter().sum()).collect())
}

/// Running sums `W(t_0) = 0, W(t_1), …, W(t_K)`.
pub fn brownian_path(increments: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    w.push(acc);
    for dw in increments {
        acc += dw;
        w.push(acc);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = brownian_increments(7, 3, 100, 0.01);
        let b = brownian_increments(7, 3, 100, 0.01);
        let c = brownian_increments(7, 4, 100, 0.01);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // A prefix does not depend on the total length.
        assert_eq!(&brownian_increments(7, 3, 10, 0.01)[..], &a[..10]);
    }

    #[test]
    fn increments_have_brownian_variance() {
        let dt = 1e-2;
        let n = 20_000;
        let inc = brownian_increments(1, 0, n, dt);
        let var = inc.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var / dt - 1.0).abs() < 0.05);
    }

    #[test]
    fn coarsening_preserves_endpoint() {
        let inc = brownian_increments(2, 0, 12, 0.1);
        let coarse = coarsen(&inc, 4).unwrap();
        assert_eq!(coarse.len(), 3);
        let end_fine = *brownian_path(&inc).last().unwrap();
        let end_coarse = *brownian_path(&coarse).last().unwrap();
        assert!((end_fine - end_coarse).abs() < 1e-14);
        assert!(coarsen(&inc, 5).is_err());
        assert!(coarsen(&inc, 0).is_err());
    }
}
