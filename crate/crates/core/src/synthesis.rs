//! Constructive controls: covariance steering to a Gaussian target, the
//! matching initial state, the scalar mean-steering family and the
//! deterministic mean-steering control.

use crate::analysis::{check_etcnl, deterministic_gramian, MeanFieldSystem};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    matrix_exponential, psd_spectral_decomposition, rank, right_inverse, GaussianLaw, RealMatrix, RealVector,
};
use crate::moments::{integrate_moments, psi_factor, GridSpec, Scalar1DSystem};
use crate::quadrature::{integrate, QuadOptions};
use crate::signal::{ControlSignal, Segment, SegmentForm};

/// Switched control `v = Σ_k v_k 1_{[(k−1)T/d, kT/d)}` with
/// `v_k(t) = D2^*(D2 D2^*)^{−1} √(d μ_k / T) e^{(t−T) A1} ζ_k`, where
/// `Σ = Σ_k μ_k ζ_k ζ_k^*`; its terminal covariance is `Σ`.
pub fn synthesize_covariance_control(sys: &MeanFieldSystem, sigma: &RealMatrix) -> Result<ControlSignal> {
    let d = sys.state_dim();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(invalid(format!(
            "target covariance is {}×{} but the state dimension is {d}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if sys.d1.iter().any(|&x| x != 0.0) || sys.c.iter().any(|&x| x != 0.0) {
        return Err(invalid(
            "covariance synthesis needs D1 = 0 and C = 0 (reduce the system first)",
        ));
    }
    let rank_d2 = rank(&sys.d2)?;
    if rank_d2 < d {
        let verdict = check_etcnl(sys)?;
        return Err(Error::SynthesisUnavailable(format!(
            "rank(D2) = {rank_d2} < {d}; Kalman rank {} (necessary condition {})",
            verdict.kalman_rank,
            if verdict.necessary { "holds" } else { "fails" }
        )));
    }
    let sd = psd_spectral_decomposition(sigma)?;
    let horizon = sys.horizon();
    let projection = right_inverse(&sys.d2)?;
    let constant_flow = sys.a1.iter().all(|&x| x == 0.0);
    let mut segments = Vec::with_capacity(d);
    for (k, (mu, zeta)) in sd.eigenvalues.iter().zip(&sd.eigenvectors).enumerate() {
        let start = horizon * k as f64 / d as f64;
        let end = if k + 1 == d {
            horizon
        } else {
            horizon * (k + 1) as f64 / d as f64
        };
        let weight = zeta * (d as f64 * mu / horizon).sqrt();
        let form = if constant_flow {
            SegmentForm::Constant(&projection * weight)
        } else {
            SegmentForm::ExpProfile {
                projection: projection.clone(),
                generator: sys.a1.clone(),
                t_ref: horizon,
                weight,
            }
        };
        segments.push(Segment { start, end, form });
    }
    ControlSignal::new(segments)
}

/// `x = e^{−T(A1+A2)} α − ∫_0^T e^{−s(A1+A2)} (B1+B2) v(s) ds`, the initial state
/// whose mean reaches `alpha` at `T` under the deterministic control `v`.
pub fn initial_state_for_mean(
    sys: &MeanFieldSystem,
    control: &ControlSignal,
    alpha: &RealVector,
) -> Result<RealVector> {
    let d = sys.state_dim();
    if alpha.len() != d {
        return Err(invalid(format!("target mean has length {} but d = {d}", alpha.len())));
    }
    if control.dim() != sys.control_dim() {
        return Err(invalid("control dimension does not match the system"));
    }
    let a = sys.mean_generator();
    let neg = -&a;
    let b = sys.mean_input();
    let horizon = sys.horizon();
    let drift = mean_forcing_integral(&neg, &b, control, 0.0, horizon)?;
    Ok(matrix_exponential(&neg, horizon)? * alpha - drift)
}

/// `∫_{t0}^{t1} e^{s G} B v(s) ds`, integrated segment by segment.
pub(crate) fn mean_forcing_integral(
    generator: &RealMatrix,
    b: &RealMatrix,
    control: &ControlSignal,
    t0: f64,
    t1: f64,
) -> Result<RealVector> {
    // Fails early on a non-finite generator so the closure below can unwrap.
    matrix_exponential(generator, t1)?;
    let mut breaks: Vec<f64> = control
        .breakpoints()
        .into_iter()
        .filter(|&x| x > t0 && x < t1)
        .collect();
    breaks.insert(0, t0);
    breaks.push(t1);
    let mut total = RealVector::zeros(generator.nrows());
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let f = |s: f64| {
            let s_in = s.clamp(lo, hi - (hi - lo) * 1e-15);
            let col = matrix_exponential(generator, s).expect("validated generator") * (b * control.eval(s_in));
            RealMatrix::from_column_slice(col.len(), 1, col.as_slice())
        };
        let r = integrate(
            f,
            lo,
            hi,
            QuadOptions {
                rel_tol: 1e-13,
                abs_tol: 1e-300,
                ..QuadOptions::default()
            },
        )?;
        total += r.value.column(0);
    }
    Ok(total)
}

/// Residuals of a [`SteeringPlan`] as predicted by the moment ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringDiagnostics {
    pub predicted_mean: RealVector,
    pub predicted_covariance: RealMatrix,
    /// `‖predicted_mean − α‖₂`.
    pub mean_residual: f64,
    /// `‖predicted_covariance − Σ‖_F`.
    pub covariance_residual: f64,
}

/// An initial state and a control steering it to a Gaussian terminal law.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringPlan {
    pub control: ControlSignal,
    pub initial_state: RealVector,
    pub target: GaussianLaw,
    pub diagnostics: SteeringDiagnostics,
}

/// Covariance control plus matching initial state, checked by integrating the moment ODE.
pub fn plan_gaussian_steering(sys: &MeanFieldSystem, target: &GaussianLaw) -> Result<SteeringPlan> {
    let control = synthesize_covariance_control(sys, &target.covariance)?;
    let initial_state = initial_state_for_mean(sys, &control, &target.mean)?;
    let path = integrate_moments(
        sys,
        &GaussianLaw::point(initial_state.clone()),
        &control,
        &GridSpec::Uniform(2),
    )?;
    let predicted_mean = path.terminal_mean().clone();
    let predicted_covariance = path.terminal_covariance().clone();
    let diagnostics = SteeringDiagnostics {
        mean_residual: (&predicted_mean - &target.mean).norm(),
        covariance_residual: (&predicted_covariance - &target.covariance).norm(),
        predicted_mean,
        predicted_covariance,
    };
    Ok(SteeringPlan {
        control,
        initial_state,
        target: target.clone(),
        diagnostics,
    })
}

/// `v(t) = e^{−(a1+a2)(T−t)} [k + ζ(1_{[T/2,T]}(t) − 1_{[0,T/2)}(t))]` with
/// `k = (α − x0 e^{(a1+a2)T})/(T b)`: every member steers the mean from `x0` to `α`.
pub fn scalar_mean_control_family(s: &Scalar1DSystem, x0: f64, alpha: f64, zeta: f64) -> Result<ControlSignal> {
    if s.b == 0.0 {
        return Err(invalid("the mean-steering family needs b ≠ 0"));
    }
    if !(x0.is_finite() && alpha.is_finite() && zeta.is_finite()) {
        return Err(invalid("family parameters must be finite"));
    }
    let k = s.mean_gap(x0, alpha);
    let horizon = s.horizon;
    let rate = s.a1 + s.a2;
    let piece = |start: f64, end: f64, w: f64| Segment {
        start,
        end,
        form: if rate == 0.0 {
            SegmentForm::Constant(RealVector::from_element(1, w))
        } else {
            SegmentForm::ExpProfile {
                projection: RealMatrix::identity(1, 1),
                generator: RealMatrix::from_element(1, 1, rate),
                t_ref: horizon,
                weight: RealVector::from_element(1, w),
            }
        },
    };
    ControlSignal::new(vec![
        piece(0.0, horizon / 2.0, k - zeta),
        piece(horizon / 2.0, horizon, k + zeta),
    ])
}

/// Closed-form terminal variance of the family: `δ² ψ(T) [(k − ζ)² + e^{a2 T}(k + ζ)²]`.
pub fn scalar_family_variance(s: &Scalar1DSystem, x0: f64, alpha: f64, zeta: f64) -> Result<f64> {
    if s.b == 0.0 {
        return Err(invalid("the mean-steering family needs b ≠ 0"));
    }
    let k = s.mean_gap(x0, alpha);
    let e = (s.a2 * s.horizon).exp();
    Ok(s.delta * s.delta * psi_factor(s.a2, s.horizon) * ((k - zeta).powi(2) + e * (k + zeta).powi(2)))
}

/// Minimizer `ζ* = k (1 − e^{a2T}) / (1 + e^{a2T})` of the family variance.
pub fn optimal_zeta(s: &Scalar1DSystem, x0: f64, alpha: f64) -> Result<f64> {
    if s.b == 0.0 {
        return Err(invalid("the mean-steering family needs b ≠ 0"));
    }
    let k = s.mean_gap(x0, alpha);
    // (1 − e^x)/(1 + e^x) = −tanh(x/2).
    Ok(-k * (s.a2 * s.horizon / 2.0).tanh())
}

/// Both `ζ` values whose family member has terminal variance `beta2`.
pub fn zeta_for_variance(s: &Scalar1DSystem, x0: f64, alpha: f64, beta2: f64) -> Result<(f64, f64)> {
    if s.b == 0.0 {
        return Err(invalid("the mean-steering family needs b ≠ 0"));
    }
    if !(beta2 >= 0.0 && beta2.is_finite()) {
        return Err(invalid("target variance must be finite and nonnegative"));
    }
    let scale = s.delta * s.delta * psi_factor(s.a2, s.horizon);
    let zstar = optimal_zeta(s, x0, alpha)?;
    let floor = scalar_family_variance(s, x0, alpha, zstar)?;
    if scale == 0.0 {
        if beta2 == 0.0 {
            return Ok((zstar, zstar));
        }
        return Err(Error::InfeasibleVariance {
            requested: beta2,
            max: 0.0,
        });
    }
    if beta2 < floor {
        return Err(Error::InfeasibleVariance {
            requested: beta2,
            max: floor,
        });
    }
    // Var(ζ) = floor + scale (1 + e^{a2T}) (ζ − ζ*)².
    let e = (s.a2 * s.horizon).exp();
    let half = ((beta2 - floor) / (scale * (1.0 + e))).sqrt();
    Ok((zstar - half, zstar + half))
}

/// `u0(t) = −(B1+B2)^* e^{−t(A1+A2)^*} G2^{−1} (x0 − y1_0 − e^{−T(A1+A2)} E[ξ])`,
/// the deterministic control that moves the mean part from `x0 − y1_0` to `E[ξ]`.
pub fn mean_steering_u0(
    sys: &MeanFieldSystem,
    x0: &RealVector,
    xi_mean: &RealVector,
    y1_0: &RealVector,
) -> Result<ControlSignal> {
    let d = sys.state_dim();
    for (v, name) in [(x0, "x0"), (xi_mean, "E[xi]"), (y1_0, "Y1(0)")] {
        if v.len() != d {
            return Err(invalid(format!("{name} has length {} but d = {d}", v.len())));
        }
    }
    let a = sys.mean_generator();
    let b = sys.mean_input();
    let horizon = sys.horizon();
    let g2 = deterministic_gramian(&a, &b, horizon, 1e-13)?;
    if rank(&g2)? < d {
        return Err(Error::SynthesisUnavailable(
            "the Gramian of (A1 + A2, B1 + B2) is singular".into(),
        ));
    }
    let demand = x0 - y1_0 - matrix_exponential(&a, -horizon)? * xi_mean;
    let weight = g2
        .clone()
        .lu()
        .solve(&demand)
        .ok_or_else(|| Error::SynthesisUnavailable("Gramian solve failed".into()))?;
    ControlSignal::new(vec![Segment {
        start: 0.0,
        end: horizon,
        form: SegmentForm::ExpProfile {
            projection: -b.transpose(),
            generator: -a.transpose(),
            t_ref: 0.0,
            weight,
        },
    }])
}
