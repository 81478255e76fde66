//! The Euler–Maruyama variance bias shrinks as the step halves.

use mfcontrol::moments::{integrate_moments, GridSpec};
use mfcontrol::simulate::{simulate_particles_with, Recording};
use mfcontrol::{ControlSignal, GaussianLaw, MeanFieldSystem, RealMatrix, RealVector};

/// Exact variance of the Euler chain `X ← (1 + aΔt) X + ΔW` after `k` steps.
fn euler_variance(a: f64, dt: f64, k: usize) -> f64 {
    let q = (1.0 + a * dt).powi(2);
    dt * (1.0 - q.powi(k as i32)) / (1.0 - q)
}

#[test]
fn variance_bias_decreases_monotonically() {
    let a = -2.0;
    let sys = MeanFieldSystem::builder(1, 1, 1.0)
        .a1(RealMatrix::from_element(1, 1, a))
        .d2(RealMatrix::from_element(1, 1, 1.0))
        .build()
        .unwrap();
    let v = ControlSignal::constant(RealVector::from_element(1, 1.0), 0.0, 1.0).unwrap();
    let start = GaussianLaw::point(RealVector::zeros(1));
    let exact = integrate_moments(&sys, &start, &v, &GridSpec::Uniform(2))
        .unwrap()
        .terminal_covariance()[(0, 0)];
    let n = 1_000_000;
    let mut biases = Vec::new();
    for k in [10usize, 20, 40] {
        let e = simulate_particles_with(&sys, &start, &v, k, n, 1, Recording::Endpoints).unwrap();
        let var = e.fit(1).covariance[(0, 0)];
        let chain = euler_variance(a, 1.0 / k as f64, k);
        // The simulation agrees with the discrete chain up to sampling noise.
        assert!((var - chain).abs() < 4.0 * chain * (2.0 / n as f64).sqrt(), "k = {k}");
        biases.push((var - exact).abs());
    }
    assert!(biases.windows(2).all(|w| w[1] < w[0]), "{biases:?}");
}
